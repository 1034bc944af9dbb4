#include "dualsmooth/io.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <cstdlib>

#include "dualsmooth/error.hpp"

namespace dualsmooth::io {

namespace {

[[noreturn]] void malformed(const std::string& what) { throw Error(ErrorKind::MalformedInput, what); }

const json& require(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) malformed(fmt::format("missing field \"{}\"", key));
  return j.at(key);
}

double number(const json& j, const char* what) {
  if (!j.is_number()) malformed(fmt::format("\"{}\" must be a number", what));
  return j.get<double>();
}

Vector vector_from(const json& j, const char* what) {
  if (j.is_number()) return Vector::Constant(1, j.get<double>());
  if (!j.is_array()) malformed(fmt::format("\"{}\" must be an array", what));
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = number(j[i], what);
  return v;
}

// Nested rows, or a flat row-major array of rows * cols entries.
Matrix matrix_from(const json& j, Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (j.is_number() && rows == 1 && cols == 1) return Matrix::Constant(1, 1, j.get<double>());
  if (!j.is_array()) malformed(fmt::format("\"{}\" must be an array", what));
  Matrix M(rows, cols);
  if (!j.empty() && j[0].is_array()) {
    if (static_cast<Eigen::Index>(j.size()) != rows)
      malformed(fmt::format("\"{}\" has {} rows, expected {}", what, j.size(), rows));
    for (Eigen::Index r = 0; r < rows; ++r) {
      const auto& row = j[static_cast<std::size_t>(r)];
      if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
        malformed(fmt::format("\"{}\" row {} must have {} entries", what, r, cols));
      for (Eigen::Index c = 0; c < cols; ++c) M(r, c) = number(row[static_cast<std::size_t>(c)], what);
    }
    return M;
  }
  if (static_cast<Eigen::Index>(j.size()) != rows * cols)
    malformed(fmt::format("\"{}\" has {} entries, expected {}", what, j.size(), rows * cols));
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) M(r, c) = number(j[static_cast<std::size_t>(r * cols + c)], what);
  return M;
}

Eigen::Index nested_rows(const json& j) {
  if (j.is_number()) return 1;
  if (j.is_array() && !j.empty() && j[0].is_array()) return static_cast<Eigen::Index>(j.size());
  return -1;
}

Eigen::Index nested_cols(const json& j) {
  if (j.is_number()) return 1;
  if (j.is_array() && !j.empty() && j[0].is_array()) return static_cast<Eigen::Index>(j[0].size());
  return -1;
}

json vector_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

json matrix_json(const Matrix& M) {
  json out = json::array();
  for (Eigen::Index r = 0; r < M.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < M.cols(); ++c) row.push_back(M(r, c));
    out.push_back(row);
  }
  return out;
}

ScalarFunction function_from(const json& j, const char* what) {
  if (j.is_number()) return ScalarFunction::constant(j.get<double>());
  if (!j.is_string()) malformed(fmt::format("\"{}\" must be a preset name or a number", what));
  try {
    return ScalarFunction::parse(j.get<std::string>());
  } catch (const Error& e) {
    malformed(fmt::format("\"{}\": {}", what, e.what()));
  }
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool is_number(const std::string& s) {
  if (s.empty()) return false;
  char* end = nullptr;
  std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::InvalidArgument, fmt::format("cannot write {}", path.string()));
  return out;
}

}  // namespace

ModelKind model_kind(const json& j) {
  if (!j.is_object()) malformed("model must be a JSON object");
  if (j.contains("kind")) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "ctmc" || kind == "finite") return ModelKind::Ctmc;
    if (kind == "diffusion" || kind == "grid") return ModelKind::Diffusion;
    if (kind == "lg" || kind == "gaussian") return ModelKind::Gaussian;
    malformed(fmt::format("unknown model kind \"{}\"", kind));
  }
  if (j.contains("nu0")) return ModelKind::Ctmc;
  if (j.contains("drift")) return ModelKind::Diffusion;
  if (j.contains("Sigma0")) return ModelKind::Gaussian;
  malformed("cannot tell the model kind; add a \"kind\" field");
}

CtmcModel ctmc_from_json(const json& j) {
  CtmcModel model;
  model.h = vector_from(require(j, "h"), "h");
  Eigen::Index d = model.h.size();
  if (j.contains("d")) {
    const auto& dj = j.at("d");
    if (!dj.is_number_integer() || dj.get<long>() < 1) malformed("\"d\" must be a positive integer");
    d = dj.get<long>();
  }
  model.A = matrix_from(require(j, "A"), d, d, "A");
  model.nu0 = vector_from(require(j, "nu0"), "nu0");
  validate(model);
  return model;
}

json to_json(const CtmcModel& model) {
  json A = json::array();
  for (Eigen::Index r = 0; r < model.A.rows(); ++r)
    for (Eigen::Index c = 0; c < model.A.cols(); ++c) A.push_back(model.A(r, c));
  return {{"kind", "ctmc"}, {"d", model.states()}, {"A", A}, {"h", vector_json(model.h)},
          {"nu0", vector_json(model.nu0)}};
}

DiffusionModel1D diffusion_from_json(const json& j) {
  DiffusionModel1D model;
  model.drift = function_from(require(j, "drift"), "drift");
  model.sigma = function_from(require(j, "sigma"), "sigma");
  model.h = function_from(require(j, "h"), "h");
  const auto& prior = require(j, "prior");
  model.prior.mean = number(require(prior, "mean"), "prior.mean");
  model.prior.std = number(require(prior, "std"), "prior.std");
  if (!(model.prior.std > 0.0)) malformed("\"prior.std\" must be positive");
  if (j.contains("domain")) {
    const auto& dom = j.at("domain");
    if (!dom.is_array() || dom.size() != 2) malformed("\"domain\" must be [x_min, x_max]");
    model.x_min = number(dom[0], "domain");
    model.x_max = number(dom[1], "domain");
  } else {
    model.x_min = model.prior.mean - 6.0 * model.prior.std;
    model.x_max = model.prior.mean + 6.0 * model.prior.std;
  }
  if (j.contains("n")) {
    if (!j.at("n").is_number_integer()) malformed("\"n\" must be an integer");
    model.n = j.at("n").get<int>();
  }
  validate(model);
  return model;
}

json to_json(const DiffusionModel1D& model) {
  return {{"kind", "diffusion"},
          {"drift", model.drift.spec},
          {"sigma", model.sigma.spec},
          {"h", model.h.spec},
          {"prior", {{"mean", model.prior.mean}, {"std", model.prior.std}}},
          {"domain", {model.x_min, model.x_max}},
          {"n", model.n}};
}

lg::GaussianModel gaussian_from_json(const json& j) {
  lg::GaussianModel model;
  model.H = vector_from(require(j, "H"), "H");
  const Eigen::Index d = model.H.size();
  model.A = matrix_from(require(j, "A"), d, d, "A");
  const auto& sj = require(j, "sigma");
  Eigen::Index p = nested_cols(sj);
  if (p < 0) {
    if (!sj.is_array() || sj.size() % static_cast<std::size_t>(d) != 0) malformed("\"sigma\" must be d x p");
    p = static_cast<Eigen::Index>(sj.size()) / d;
  } else if (nested_rows(sj) != d) {
    malformed("\"sigma\" must have d rows");
  }
  model.sigma = matrix_from(sj, d, p, "sigma");
  model.m0 = j.contains("m0") ? vector_from(j.at("m0"), "m0") : Vector::Zero(d);
  model.Sigma0 = matrix_from(require(j, "Sigma0"), d, d, "Sigma0");
  validate(model);
  return model;
}

json to_json(const lg::GaussianModel& model) {
  return {{"kind", "lg"},
          {"A", matrix_json(model.A)},
          {"H", vector_json(model.H)},
          {"sigma", matrix_json(model.sigma)},
          {"m0", vector_json(model.m0)},
          {"Sigma0", matrix_json(model.Sigma0)}};
}

ObservationPath observation_from_json(const json& j) {
  ObservationPath obs;
  obs.T = number(require(j, "T"), "T");
  const auto& nj = require(j, "N");
  if (!nj.is_number_integer()) malformed("\"N\" must be an integer");
  obs.N = nj.get<int>();
  obs.z = vector_from(require(j, "z"), "z");
  validate(obs);
  return obs;
}

json to_json(const ObservationPath& obs) {
  return {{"T", obs.T}, {"N", obs.N}, {"z", vector_json(obs.z)}};
}

json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) malformed(fmt::format("cannot open {}", path.string()));
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    malformed(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void save_json(const std::filesystem::path& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

std::string format_number(double value) { return fmt::format("{:.17g}", value); }

void write_solution_csv(const std::filesystem::path& path, const finite::SmoothingSolutionF& sol) {
  auto out = open_out(path);
  out << "t,state,mu,lambda,pi\n";
  for (Eigen::Index k = 0; k < sol.pi.rows(); ++k)
    for (Eigen::Index i = 0; i < sol.pi.cols(); ++i)
      out << fmt::format("{:.17g},{},{:.17g},{:.17g},{:.17g}\n", sol.timegrid[k], i, sol.mu(k, i),
                         sol.lambda(k, i), sol.pi(k, i));
}

void write_solution_csv(const std::filesystem::path& path, const grid::SmoothingSolutionG& sol) {
  auto out = open_out(path);
  out << "t,x,mu,lambda,pi,u\n";
  for (Eigen::Index k = 0; k < sol.pi.rows(); ++k)
    for (Eigen::Index i = 0; i < sol.pi.cols(); ++i)
      out << fmt::format("{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", sol.timegrid[k], sol.x[i],
                         sol.mu(k, i), sol.lambda(k, i), sol.pi(k, i), sol.u(k, i));
}

void write_solution_csv(const std::filesystem::path& path, const lg::MeeSolution& sol) {
  auto out = open_out(path);
  const Eigen::Index d = sol.m.cols();
  const Eigen::Index p = sol.u.cols();
  out << "t";
  for (Eigen::Index i = 0; i < d; ++i) out << ",mean_" << i;
  for (Eigen::Index i = 0; i < p; ++i) out << ",u_" << i;
  for (Eigen::Index i = 0; i < d; ++i) out << ",V_" << i;
  out << '\n';
  for (Eigen::Index k = 0; k < sol.m.rows(); ++k) {
    out << format_number(sol.timegrid[k]);
    for (Eigen::Index i = 0; i < d; ++i) out << ',' << format_number(sol.m(k, i));
    for (Eigen::Index i = 0; i < p; ++i) out << ',' << format_number(sol.u(k, i));
    for (Eigen::Index i = 0; i < d; ++i) out << ',' << format_number(sol.V[static_cast<std::size_t>(k)](i, i));
    out << '\n';
  }
}

void emit_plot_data(const std::filesystem::path& in_path, const std::filesystem::path& out_path) {
  std::ifstream in(in_path);
  if (!in) malformed(fmt::format("cannot open {}", in_path.string()));
  std::string line;
  if (!std::getline(in, line) || line.empty()) malformed("missing CSV header");
  if (line.back() == '\r') line.pop_back();
  const auto header = split(line);
  if (header.empty() || header[0] != "t") malformed("first CSV column must be \"t\"");
  for (const auto& name : header)
    if (name.empty()) malformed("empty column name in CSV header");

  // Column 1 is the state index or the cell centre when present.
  const bool keyed = header.size() > 1 && (header[1] == "state" || header[1] == "x");
  const bool finite_table = keyed && header[1] == "state";
  const std::size_t first_field = keyed ? 2 : 1;
  if (first_field >= header.size()) malformed("CSV has no value columns");

  std::vector<std::vector<std::string>> rows;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != header.size())
      malformed(fmt::format("line {}: {} cells, header has {}", line_no, cells.size(), header.size()));
    for (const auto& cell : cells)
      if (!is_number(cell)) malformed(fmt::format("line {}: \"{}\" is not a number", line_no, cell));
    rows.push_back(std::move(cells));
  }

  auto out = open_out(out_path);
  out << "series,t,x_or_state,value\n";
  for (std::size_t f = first_field; f < header.size(); ++f) {
    for (const auto& row : rows) {
      if (finite_table) {
        out << header[f] << '_' << row[1] << ',' << row[0] << ',' << row[1] << ',' << row[f] << '\n';
      } else if (keyed) {
        out << header[f] << ',' << row[0] << ',' << row[1] << ',' << row[f] << '\n';
      } else {
        // Component tables: the index suffix of "mean_3" goes in the key column.
        const auto pos = header[f].rfind('_');
        const std::string key = pos == std::string::npos ? "" : header[f].substr(pos + 1);
        out << header[f] << ',' << row[0] << ',' << key << ',' << row[f] << '\n';
      }
    }
  }
}

}  // namespace dualsmooth::io
