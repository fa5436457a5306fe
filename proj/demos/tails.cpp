// Scales one latent vector outward and prints both heads' posteriors.
// softmax collapses onto one class; softRmax drifts back toward uniform.

#include <polyclass/activations.hpp>

#include <cstdio>

int main() {
  using namespace polyclass;
  const Vector dir{0.9, -0.3, 0.2};
  std::printf("%10s  %-28s  %-28s\n", "scale", "softmax", "softRmax");
  for (double t : {0.1, 1.0, 10.0, 100.0, 1e3, 1e4, 1e6}) {
    Vector z(dir);
    for (double& v : z) v *= t;
    const Vector s = softmax(z), r = softrmax(z);
    std::printf("%10g  %.6f %.6f %.6f  %.6f %.6f %.6f\n", t, s[0], s[1], s[2], r[0], r[1], r[2]);
  }
}
