#include "ppfactor/model_io.hpp"

#include "ppfactor/error.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace ppf {

namespace {

using nlohmann::json;

json rows_of(const Eigen::MatrixXd& m) {
  json out = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    out.push_back(std::move(row));
  }
  return out;
}

json vector_of(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

Eigen::VectorXd to_vector(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Eigen::MatrixXd to_matrix(const json& j, Eigen::Index cols) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<Eigen::Index>(rows[i].size()) != cols) throw FormatError("ragged matrix in model file");
    for (Eigen::Index k = 0; k < cols; ++k) m(static_cast<Eigen::Index>(i), k) = rows[i][static_cast<std::size_t>(k)];
  }
  return m;
}

}  // namespace

std::string model_to_json(const FitResult& fit) {
  const StationModel& m = fit.model;
  const FitDiagnostics& d = fit.diagnostics;
  json doc;
  doc["unit"] = m.unit;
  doc["basis"] = {{"a", m.basis.start()}, {"b", m.basis.end()}, {"order", m.basis.order()}, {"knots", m.basis.knots()}};
  doc["c0"] = vector_of(m.c0);
  doc["C"] = rows_of(m.C);
  doc["U"] = rows_of(m.U);
  doc["sigma2"] = vector_of(m.sigma2);
  doc["tau"] = m.tau;
  doc["diagnostics"] = {{"objective", d.objective},
                        {"converged", d.converged},
                        {"iterations", d.iterations},
                        {"trace", d.trace},
                        {"day_integrals", vector_of(d.day_integrals)},
                        {"sigma2_preliminary", vector_of(d.sigma2_preliminary)},
                        {"warnings", d.warnings}};
  return doc.dump() + "\n";
}

FitResult model_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    const auto& b = doc.at("basis");
    SplineBasis basis(b.at("knots").get<std::vector<double>>(), b.at("order").get<int>());
    FitResult fit{StationModel{doc.at("unit").get<std::string>(), basis, {}, {}, {}, {}, 1.0}, {}};
    StationModel& m = fit.model;
    m.c0 = to_vector(doc.at("c0"));
    const Eigen::VectorXd sigma2 = to_vector(doc.at("sigma2"));
    const auto p = sigma2.size();
    m.C = to_matrix(doc.at("C"), p);
    m.U = to_matrix(doc.at("U"), p);
    m.sigma2 = sigma2;
    m.tau = doc.at("tau").get<double>();
    const auto q = static_cast<Eigen::Index>(basis.dimension());
    if (m.c0.size() != q || m.C.rows() != q) throw FormatError("coefficient length does not match basis dimension");
    if (doc.contains("diagnostics")) {
      const auto& d = doc.at("diagnostics");
      FitDiagnostics& diag = fit.diagnostics;
      diag.objective = d.value("objective", 0.0);
      diag.converged = d.value("converged", false);
      diag.iterations = d.value("iterations", 0);
      diag.trace = d.value("trace", std::vector<double>{});
      if (d.contains("day_integrals")) diag.day_integrals = to_vector(d.at("day_integrals"));
      if (d.contains("sigma2_preliminary")) diag.sigma2_preliminary = to_vector(d.at("sigma2_preliminary"));
      diag.warnings = d.value("warnings", std::vector<std::string>{});
    }
    return fit;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed model document: ") + e.what());
  }
}

void save_model(const FitResult& fit, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << model_to_json(fit);
}

FitResult load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return model_from_json(buf.str());
}

}  // namespace ppf
