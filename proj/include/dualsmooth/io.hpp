#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "dualsmooth/finite_smoother.hpp"
#include "dualsmooth/gaussian_mee.hpp"
#include "dualsmooth/grid_smoother.hpp"
#include "dualsmooth/models.hpp"

namespace dualsmooth::io {

using json = nlohmann::json;

enum class ModelKind { Ctmc, Diffusion, Gaussian };

// "kind" field if present ("ctmc" | "diffusion" | "lg"), otherwise inferred
// from the keys.
ModelKind model_kind(const json& j);

CtmcModel ctmc_from_json(const json& j);
json to_json(const CtmcModel& model);

DiffusionModel1D diffusion_from_json(const json& j);
json to_json(const DiffusionModel1D& model);

lg::GaussianModel gaussian_from_json(const json& j);
json to_json(const lg::GaussianModel& model);

ObservationPath observation_from_json(const json& j);
json to_json(const ObservationPath& obs);

json load_json(const std::filesystem::path& path);
void save_json(const std::filesystem::path& path, const json& j);

// 17 significant digits.
std::string format_number(double value);

// Solution tables. Columns:
//   finite: t,state,mu,lambda,pi
//   grid:   t,x,mu,lambda,pi,u
//   lg:     t,mean_0..,u_0..,V_0.. (covariance diagonal)
void write_solution_csv(const std::filesystem::path& path, const finite::SmoothingSolutionF& sol);
void write_solution_csv(const std::filesystem::path& path, const grid::SmoothingSolutionG& sol);
void write_solution_csv(const std::filesystem::path& path, const lg::MeeSolution& sol);

// Long-format plot table (series,t,x_or_state,value) from any solution CSV.
// Finite tables give one series per field and state ("pi_2"); grid tables one
// series per field with x in the third column. Throws MalformedInput.
void emit_plot_data(const std::filesystem::path& in, const std::filesystem::path& out);

}  // namespace dualsmooth::io
