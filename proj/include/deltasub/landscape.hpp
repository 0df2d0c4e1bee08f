#pragma once

#include <array>
#include <string>
#include <vector>

#include "deltasub/pipeline.hpp"

namespace deltasub {

// 2-D slice of the subspace spanned by Gram-Schmidt axes through the three
// method solutions, sampled on a regular grid.
struct LandscapeGrid {
  IntrinsicVector origin;
  std::vector<float> u, v;  // orthonormal axes
  double range = 4.0;
  double step = 0.4;
  int side = 21;
  std::vector<double> values;  // side*side, alpha-major
  // coordinates of the three solutions in the (u, v) frame: A, P, L
  std::array<std::pair<double, double>, 3> solution_coords{};
  double e_pet = 0.0;

  double alpha_at(int i) const { return -range + i * step; }
  double beta_at(int j) const { return -range + j * step; }
  double value_at(int i, int j) const { return values[static_cast<size_t>(i) * side + j]; }
};

struct LandscapeAxes {
  IntrinsicVector origin;  // I_A
  std::vector<float> u, v;
};

// Origin at I_A; u along I_P - I_A; v the Gram-Schmidt complement through
// I_L - I_A. Degenerate geometry (zero or collinear differences) is an error.
LandscapeAxes orthonormal_axes(const IntrinsicVector& i_a, const IntrinsicVector& i_p,
                               const IntrinsicVector& i_l);

// P(alpha, beta): mean over the three methods of test accuracy of the
// reconstructed solution at I0 + alpha*u + beta*v, divided by e_pet.
double landscape_value(const BackboneWeights& w, const SubspaceArtifacts& art, const Task& task,
                       const LandscapeAxes& axes, double alpha, double beta, double e_pet,
                       int cap = 256);

// Full grid traversal; points are evaluated concurrently over the immutable
// artifacts and assembled by index.
LandscapeGrid landscape_grid(const BackboneWeights& w, const SubspaceArtifacts& art,
                             const Task& task, const IntrinsicVector& i_a,
                             const IntrinsicVector& i_p, const IntrinsicVector& i_l, double e_pet,
                             double range = 4.0, double step = 0.4, int cap = 256,
                             int threads = 0);

// CSV with header alpha,beta,P.
std::string landscape_csv(const LandscapeGrid& grid);

}  // namespace deltasub
