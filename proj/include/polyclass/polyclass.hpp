#pragma once

#include <polyclass/activations.hpp>
#include <polyclass/attacks.hpp>
#include <polyclass/checkpoint.hpp>
#include <polyclass/config.hpp>
#include <polyclass/data.hpp>
#include <polyclass/distributions.hpp>
#include <polyclass/errors.hpp>
#include <polyclass/experiments.hpp>
#include <polyclass/generative.hpp>
#include <polyclass/metrics.hpp>
#include <polyclass/models.hpp>
#include <polyclass/numcore.hpp>
#include <polyclass/shift.hpp>
