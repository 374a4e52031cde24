#pragma once

#include <string>

#include "l96/ode.hpp"

namespace l96 {

// Closure parameters of the slow-only model
//   dx/dt = f(x) + L_y z* + L_L (x - x*),
// where the last term is dropped for order 0.
struct ReducedModel {
  int order = 1;
  StateVector x_star;      // N_x, uniform by translation symmetry
  StateVector z_bar_star;  // N_y, uniform by translation symmetry
  Matrix c_mat;            // N_y x N_y integrated correlation times C(0)^-1
  Matrix l_l;              // N_x x N_x, equals L_y * c_mat * L_x

  struct Provenance {
    double x_star_run = 0.0;     // slow time units
    double z_bar_run = 0.0;      // fast time units
    double correlation_run = 0.0;  // fast time units
    double t_corr = 0.0;         // integration cutoff actually used, fast time units
    double dt_lag = 0.0;
    bool centered = true;
    std::string config_hash;
  } provenance;
};

}  // namespace l96
