#pragma once

#include "l96/lorenz96.hpp"

namespace l96::fixture {

// Uncoupled long-run constants, frozen from an independent NumPy RK4 loop
// (dt=0.01, spinup 100, 2e4 time units). N=20 for the slow forcings and
// N=80 for the fast ones.
inline const Calibration kCalX16{16.0, 3.09, 6.32, 1e4, 100.0, 0.01};
inline const Calibration kCalY12{12.0, 2.77, 5.06, 1e4, 100.0, 0.01};

inline ModelParams regime(double f_x = 16.0, double lambda = 0.4, double epsilon = 0.1) {
  ModelParams p;
  p.f_x = f_x;
  p.lambda_x = lambda;
  p.lambda_y = lambda;
  p.epsilon = epsilon;
  return p;
}

}  // namespace l96::fixture
