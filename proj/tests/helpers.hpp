#pragma once

#include <filesystem>

#include "dualsmooth/gaussian_mee.hpp"
#include "dualsmooth/io.hpp"
#include "dualsmooth/models.hpp"

namespace testing {

inline std::filesystem::path fixtures() { return DUALSMOOTH_FIXTURES_DIR; }

inline dualsmooth::CtmcModel model_f3() {
  return dualsmooth::io::ctmc_from_json(dualsmooth::io::load_json(fixtures() / "ctmc_model.json"));
}

inline dualsmooth::ObservationPath f3_obs() {
  return dualsmooth::io::observation_from_json(dualsmooth::io::load_json(fixtures() / "ctmc_obs.json"));
}

inline dualsmooth::lg::GaussianModel lg_scalar() {
  return dualsmooth::io::gaussian_from_json(dualsmooth::io::load_json(fixtures() / "lg_model.json"));
}

inline dualsmooth::ObservationPath lg_obs() {
  return dualsmooth::io::observation_from_json(dualsmooth::io::load_json(fixtures() / "lg_obs.json"));
}

inline dualsmooth::ObservationPath zero_path(double T, int N) {
  return {T, N, dualsmooth::Vector::Zero(N + 1)};
}

inline dualsmooth::ObservationPath linear_path(double T, int N, double slope) {
  dualsmooth::ObservationPath obs{T, N, dualsmooth::Vector(N + 1)};
  for (int k = 0; k <= N; ++k) obs.z[k] = slope * obs.time(k);
  return obs;
}

inline double max_abs(const Eigen::Ref<const Eigen::MatrixXd>& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace testing
