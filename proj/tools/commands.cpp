#include "commands.hpp"

#include "ppfactor/cluster.hpp"
#include "ppfactor/correlate.hpp"
#include "ppfactor/error.hpp"
#include "ppfactor/evalsim.hpp"
#include "ppfactor/events.hpp"
#include "ppfactor/fit.hpp"
#include "ppfactor/model_io.hpp"
#include "ppfactor/parallel.hpp"
#include "ppfactor/simulate.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

namespace ppf::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kVersion = "0.1.0";

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Collects what a run read and wrote, then writes the manifest next to the output.
class Run {
 public:
  Run(CLI::App* sub, const CommonOptions& common) : sub_(sub), common_(common), start_(std::chrono::steady_clock::now()) {
    started_ = utc_now();
  }

  void input(const std::string& path) { inputs_.push_back(path); }
  void output(const std::string& path) { outputs_.push_back(path); }
  void note(const std::string& key, json value) { extra_[key] = std::move(value); }

  void finish(const std::string& manifest_path) const {
    json doc;
    doc["command"] = sub_->get_name();
    doc["version"] = kVersion;
    doc["config"] = sub_->config_to_str(true, false);
    doc["seed"] = common_.seed;
    doc["threads"] = resolve_threads(common_.threads);
    doc["inputs"] = inputs_;
    doc["outputs"] = outputs_;
    doc["started"] = started_;
    doc["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    if (!extra_.empty()) doc["notes"] = extra_;
    std::ofstream out(manifest_path);
    if (!out) throw std::runtime_error("cannot write manifest " + manifest_path);
    out << doc.dump(2) << "\n";
  }

 private:
  CLI::App* sub_;
  CommonOptions common_;
  std::chrono::steady_clock::time_point start_;
  std::string started_;
  std::vector<std::string> inputs_, outputs_;
  json extra_ = json::object();
};

std::string manifest_for_file(const std::string& out) { return out + ".manifest.json"; }
std::string manifest_for_dir(const std::string& dir) { return (fs::path(dir) / "manifest.json").string(); }

void ensure_parent(const std::string& file) {
  const fs::path parent = fs::path(file).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

std::ofstream open_out(const std::string& path) {
  ensure_parent(path);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

// Output path with `suffix` inserted before the extension: corr.csv -> corr_distances.csv.
std::string sibling(const std::string& path, const std::string& suffix, const std::string& ext) {
  fs::path p(path);
  return (p.parent_path() / (p.stem().string() + suffix + ext)).string();
}

std::string safe_name(const std::string& unit) {
  std::string s = unit.empty() ? "unit" : unit;
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
  }
  return s;
}

// Model or replication files of a directory, sorted by name.
std::vector<fs::path> json_files(const std::string& dir) {
  if (!fs::is_directory(dir)) throw std::invalid_argument("not a directory: " + dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto& p = entry.path();
    if (entry.is_regular_file() && p.extension() == ".json" && p.filename() != "manifest.json") files.push_back(p);
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void add_common(CLI::App* sub, CommonOptions& common, bool out_required = true) {
  sub->add_option("--seed", common.seed, "Random seed")->capture_default_str();
  sub->add_option("--threads", common.threads, "Worker threads (0: PPFACTOR_THREADS or all cores)")
      ->check(CLI::NonNegativeNumber);
  auto* out = sub->add_option("--out", common.out, "Output path");
  if (out_required) out->required();
}

struct BasisOptions {
  int knots = 10;
  int order = 4;

  void add(CLI::App* sub) {
    sub->add_option("--knots", knots, "Equally spaced interior knots")->capture_default_str()->check(CLI::NonNegativeNumber);
    sub->add_option("--order", order, "Spline order (4 = cubic)")->capture_default_str()->check(CLI::Range(3, 10));
  }
  SplineBasis make(const ReplicatedPointData& data) const { return make_basis(data.a, data.b, knots, order); }
};

struct FitOptions {
  int p = 2;
  double xi1 = 1e-5;
  double xi2 = 1e-5;
  int max_iters = 200;
  double score_bound = 5.0;
  bool no_rescale = false;
  double share = 0.0;

  void add(CLI::App* sub) {
    sub->add_option("--p", p, "Number of components")->capture_default_str()->check(CLI::NonNegativeNumber);
    sub->add_option("--xi1", xi1, "Roughness weight of the mean")->capture_default_str();
    sub->add_option("--xi2", xi2, "Roughness weight of the components")->capture_default_str();
    sub->add_option("--max-iters", max_iters, "Outer iteration cap")->capture_default_str();
    sub->add_option("--score-bound", score_bound, "Bound on each daily score")->capture_default_str();
    sub->add_flag("--no-rescale", no_rescale, "Skip score rescaling");
  }
  FitConfig config() const {
    FitConfig c;
    c.components = p;
    c.xi1 = xi1;
    c.xi2 = xi2;
    c.max_outer_iters = max_iters;
    c.score_bound = score_bound;
    c.rescale = !no_rescale;
    return c;
  }
};

// --- ingest -----------------------------------------------------------------

void setup_ingest(CLI::App& app, int& exit_code) {
  auto* sub = app.add_subcommand("ingest", "Bin a trip/event CSV into one replication file per unit");
  auto common = std::make_shared<CommonOptions>();
  auto input = std::make_shared<std::string>();
  auto schema = std::make_shared<ColumnSchema>();
  auto first = std::make_shared<std::string>();
  auto last = std::make_shared<std::string>();
  auto unit_index = std::make_shared<int>(-1);
  auto time_index = std::make_shared<int>(-1);
  auto no_header = std::make_shared<bool>(false);
  auto delimiter = std::make_shared<std::string>();
  sub->add_option("--input", *input, "Event CSV")->required()->check(CLI::ExistingFile);
  sub->add_option("--unit-column", schema->unit_column, "Header name of the unit column")->capture_default_str();
  sub->add_option("--time-column", schema->time_column, "Header name of the time column")->capture_default_str();
  sub->add_option("--unit-index", *unit_index, "0-based unit column (overrides the name)");
  sub->add_option("--time-index", *time_index, "0-based time column (overrides the name)");
  sub->add_flag("--no-header", *no_header, "First line is data");
  sub->add_option("--delimiter", *delimiter, "Field delimiter (default: detect tab or comma)");
  sub->add_option("--start", *first, "First day, YYYY-MM-DD")->required();
  sub->add_option("--end", *last, "Last day, YYYY-MM-DD")->required();
  add_common(sub, *common);
  sub->callback([=, &exit_code] {
    Run run(sub, *common);
    ColumnSchema s = *schema;
    if (*unit_index >= 0) s.unit_index = static_cast<std::size_t>(*unit_index);
    if (*time_index >= 0) s.time_index = static_cast<std::size_t>(*time_index);
    s.has_header = !*no_header;
    if (delimiter->size() > 1) throw std::invalid_argument("delimiter must be one character");
    if (!delimiter->empty()) s.delimiter = (*delimiter)[0];
    const auto d0 = parse_date(*first), d1 = parse_date(*last);
    if (!d0 || !d1) throw std::invalid_argument("dates must be YYYY-MM-DD");

    std::ifstream in(*input);
    if (!in) throw std::runtime_error("cannot read " + *input);
    run.input(*input);
    const ParseReport report = parse_events(in, s);
    const ReplicationSet set = to_replications(report.records, DateWindow{*d0, *d1});

    fs::create_directories(common->out);
    std::ofstream counts = open_out((fs::path(common->out) / "counts.csv").string());
    counts << "unit,file,n,total,mean_daily,min_daily,max_daily\n";
    for (const auto& [unit, data] : set.units) {
      const std::string file = safe_name(unit) + ".json";
      save_replications(data, (fs::path(common->out) / file).string());
      const CountSummary c = summarize(data);
      counts << unit << ',' << file << ',' << data.n() << ',' << c.total << ',' << g17(c.mean_daily) << ','
             << c.min_daily << ',' << c.max_daily << '\n';
    }
    run.output(common->out);
    run.note("units", set.units.size());
    run.note("days", DateWindow{*d0, *d1}.days());
    run.note("rows", report.data_rows);
    run.note("malformed_rows", report.malformed_lines.size());
    run.note("outside_window", set.outside_window);
    std::fprintf(stderr, "%zu units, %d days, %zu malformed rows, %zu events outside the window\n", set.units.size(),
                 DateWindow{*d0, *d1}.days(), report.malformed_lines.size(), set.outside_window);
    run.finish(manifest_for_dir(common->out));
    exit_code = 0;
  });
}

// --- fit --------------------------------------------------------------------

FitResult fit_one(const ReplicatedPointData& data, const BasisOptions& basis, const FitOptions& options) {
  FitConfig cfg = options.config();
  const SplineBasis b = basis.make(data);
  FitResult fit = fit_station(data, b, cfg);
  if (options.share > 0.0 && fit.model.components() > 1) {
    const std::vector<double> var(fit.model.sigma2.data(), fit.model.sigma2.data() + fit.model.sigma2.size());
    const int chosen = select_ncomp(var, options.share);
    if (chosen < cfg.components) {
      cfg.components = chosen;
      fit = fit_station(data, b, cfg);
      fit.diagnostics.warnings.push_back("components reduced to " + std::to_string(chosen) + " by variance share");
    }
  }
  return fit;
}

void setup_fit(CLI::App& app, int& exit_code) {
  auto* sub = app.add_subcommand("fit", "Fit the intensity model to one replication file or a directory of them");
  auto common = std::make_shared<CommonOptions>();
  auto input = std::make_shared<std::string>();
  auto basis = std::make_shared<BasisOptions>();
  auto options = std::make_shared<FitOptions>();
  sub->add_option("--input", *input, "Replication JSON or directory")->required()->check(CLI::ExistingPath);
  basis->add(sub);
  options->add(sub);
  sub->add_option("--variance-share", options->share,
                  "Refit with the fewest components reaching this score-variance share (0: off)");
  add_common(sub, *common);
  sub->callback([=, &exit_code] {
    Run run(sub, *common);
    if (!fs::is_directory(*input)) {
      const ReplicatedPointData data = load_replications(*input);
      run.input(*input);
      const FitResult fit = fit_one(data, *basis, *options);
      ensure_parent(common->out);
      save_model(fit, common->out);
      run.output(common->out);
      run.note("converged", fit.diagnostics.converged);
      run.finish(manifest_for_file(common->out));
      if (!fit.diagnostics.converged) {
        std::fprintf(stderr, "fit did not converge within %d iterations\n", options->max_iters);
        exit_code = 1;
      }
      return;
    }
    const auto files = json_files(*input);
    fs::create_directories(common->out);
    std::vector<std::string> errors(files.size());
    std::vector<char> converged(files.size(), 0);
    parallel_for(files.size(), resolve_threads(common->threads), [&](std::size_t k) {
      try {
        const ReplicatedPointData data = load_replications(files[k].string());
        const FitResult fit = fit_one(data, *basis, *options);
        save_model(fit, (fs::path(common->out) / files[k].filename()).string());
        converged[k] = fit.diagnostics.converged;
      } catch (const std::exception& e) {
        errors[k] = e.what();
      }
    });
    json failed = json::object();
    int nonconverged = 0;
    for (std::size_t k = 0; k < files.size(); ++k) {
      run.input(files[k].string());
      if (!errors[k].empty()) {
        failed[files[k].filename().string()] = errors[k];
        std::fprintf(stderr, "%s: %s\n", files[k].filename().string().c_str(), errors[k].c_str());
      } else {
        run.output((fs::path(common->out) / files[k].filename()).string());
        if (!converged[k]) ++nonconverged;
      }
    }
    run.note("failed", failed);
    run.note("nonconverged", nonconverged);
    run.finish(manifest_for_dir(common->out));
    std::fprintf(stderr, "%zu fitted, %zu failed, %d not converged\n", files.size() - failed.size(), failed.size(),
                 nonconverged);
    exit_code = failed.empty() && nonconverged == 0 ? 0 : 1;
  });
}

// --- crossval ---------------------------------------------------------------

std::vector<std::pair<double, double>> parse_grid(const std::string& spec) {
  if (spec == "default") return default_cv_grid();
  std::vector<std::pair<double, double>> grid;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("grid entries must be xi1:xi2");
    try {
      grid.emplace_back(std::stod(item.substr(0, colon)), std::stod(item.substr(colon + 1)));
    } catch (const std::logic_error&) {
      throw std::invalid_argument("bad grid entry '" + item + "'");
    }
  }
  if (grid.empty()) throw std::invalid_argument("empty grid");
  return grid;
}

void setup_crossval(CLI::App& app, int& exit_code) {
  auto* sub = app.add_subcommand("crossval", "Choose the roughness weights by k-fold cross-validation");
  auto common = std::make_shared<CommonOptions>();
  auto input = std::make_shared<std::string>();
  auto grid = std::make_shared<std::string>("default");
  auto folds = std::make_shared<int>(5);
  auto basis = std::make_shared<BasisOptions>();
  auto options = std::make_shared<FitOptions>();
  sub->add_option("--input", *input, "Replication JSON")->required()->check(CLI::ExistingFile);
  sub->add_option("--grid", *grid, "'default' (6 x 6, 1e-7..1e-2) or xi1:xi2,xi1:xi2,...")->capture_default_str();
  sub->add_option("--folds", *folds, "Number of folds")->capture_default_str();
  basis->add(sub);
  options->add(sub);
  add_common(sub, *common);
  sub->callback([=, &exit_code] {
    Run run(sub, *common);
    const ReplicatedPointData data = load_replications(*input);
    run.input(*input);
    FitConfig cfg = options->config();
    cfg.cv_folds = *folds;
    const CrossValidationResult cv = cross_validate(data, basis->make(data), cfg, parse_grid(*grid));
    std::ofstream out = open_out(common->out);
    out << "xi1,xi2,cv\n";
    for (const auto& row : cv.table) out << g17(row.xi1) << ',' << g17(row.xi2) << ',' << g17(row.cv) << '\n';
    for (const auto& w : cv.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    std::printf("best xi1 %g xi2 %g\n", cv.best_xi1, cv.best_xi2);
    run.output(common->out);
    run.note("best_xi1", cv.best_xi1);
    run.note("best_xi2", cv.best_xi2);
    run.note("warnings", cv.warnings);
    run.finish(manifest_for_file(common->out));
    exit_code = 0;
  });
}

// --- correlate --------------------------------------------------------------

void write_square_csv(const std::string& path, const std::vector<std::string>& units, const Eigen::MatrixXd& m) {
  std::ofstream out = open_out(path);
  out << "unit";
  for (const auto& u : units) out << ',' << u;
  out << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out << units[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << ',' << g17(m(i, j));
    out << '\n';
  }
}

void setup_correlate(CLI::App& app, int& exit_code) {
  auto* sub = app.add_subcommand("correlate", "Pairwise canonical correlations with Wilks tests and BH trimming");
  auto common = std::make_shared<CommonOptions>();
  auto models = std::make_shared<std::string>();
  auto alpha = std::make_shared<double>(0.05);
  sub->add_option("--models", *models, "Directory of model JSON files")->required()->check(CLI::ExistingDirectory);
  sub->add_option("--alpha", *alpha, "False discovery rate level")->capture_default_str();
  add_common(sub, *common);
  sub->callback([=, &exit_code] {
    Run run(sub, *common);
    std::vector<std::string> units;
    std::vector<Eigen::MatrixXd> scores;
    std::vector<std::string> skipped;
    for (const auto& file : json_files(*models)) {
      const FitResult fit = load_model(file.string());
      run.input(file.string());
      if (fit.model.components() == 0) {
        skipped.push_back(fit.model.unit);
        continue;
      }
      if (!scores.empty() && fit.model.days() != scores.front().rows()) {
        throw std::invalid_argument("models have different day counts");
      }
      if (std::find(units.begin(), units.end(), fit.model.unit) != units.end()) {
        throw std::invalid_argument("duplicate unit id '" + fit.model.unit + "' in " + file.string());
      }
      units.push_back(fit.model.unit);
      scores.push_back(fit.model.U);
    }
    if (scores.size() < 2) throw std::invalid_argument("need at least two models with components");
    std::vector<CorrelationEntry> entries = correlate_all(scores, resolve_threads(common->threads));
    bh_trim(entries, *alpha, entries.size());
    std::ofstream out = open_out(common->out);
    out << "j,j_prime,rho,Q,nu,pvalue,significant\n";
    for (const auto& e : entries) {
      out << units[e.j] << ',' << units[e.j_prime] << ',' << g17(e.rho) << ',' << g17(e.q) << ',' << e.nu << ','
          << g17(e.p_value) << ',' << (e.significant ? 1 : 0) << '\n';
    }
    const std::string dist_path = sibling(common->out, "_distances", ".csv");
    write_square_csv(dist_path, units, build_distance_matrix(entries, units.size()));
    const auto significant = std::count_if(entries.begin(), entries.end(), [](const auto& e) { return e.significant; });
    run.output(common->out);
    run.output(dist_path);
    run.note("tests", entries.size());
    run.note("significant", significant);
    run.note("skipped_units", skipped);
    std::fprintf(stderr, "%zu units, %zu tests, %td significant at FDR %g\n", units.size(), entries.size(),
                 significant, *alpha);
    run.finish(manifest_for_file(common->out));
    exit_code = 0;
  });
}

// --- cluster ----------------------------------------------------------------

std::pair<std::vector<std::string>, Eigen::MatrixXd> read_square_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      if (!cell.empty() && cell.back() == '\r') cell.pop_back();
      cells.push_back(cell);
    }
    return cells;
  };
  std::string line;
  if (!std::getline(in, line)) throw FormatError("distance file is empty");
  const auto header = split(line);
  if (header.size() < 2) throw FormatError("distance header needs unit ids");
  std::vector<std::string> units(header.begin() + 1, header.end());
  const auto d = static_cast<Eigen::Index>(units.size());
  Eigen::MatrixXd m(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    if (!std::getline(in, line)) throw FormatError("distance file has too few rows");
    const auto cells = split(line);
    if (static_cast<Eigen::Index>(cells.size()) != d + 1) throw FormatError("distance row has wrong length");
    if (cells[0] != units[static_cast<std::size_t>(i)]) throw FormatError("row and column unit ids differ");
    for (Eigen::Index j = 0; j < d; ++j) {
      try {
        m(i, j) = std::stod(cells[static_cast<std::size_t>(j + 1)]);
      } catch (const std::logic_error&) {
        throw FormatError("non-numeric distance '" + cells[static_cast<std::size_t>(j + 1)] + "'");
      }
    }
  }
  return {units, m};
}

void setup_cluster(CLI::App& app, int& exit_code) {
  auto* sub = app.add_subcommand("cluster", "Complete-linkage clustering of a distance matrix");
  auto common = std::make_shared<CommonOptions>();
  auto distances = std::make_shared<std::string>();
  auto height = std::make_shared<double>(0.0);
  auto k = std::make_shared<int>(0);
  sub->add_option("--distances", *distances, "Square distance CSV")->required()->check(CLI::ExistingFile);
  auto* h_opt = sub->add_option("--cut-height", *height, "Cut below this merge height");
  auto* k_opt = sub->add_option("--k", *k, "Cut into exactly k clusters");
  h_opt->excludes(k_opt);
  add_common(sub, *common);
  sub->callback([=, &exit_code] {
    if (h_opt->count() + k_opt->count() != 1) throw std::invalid_argument("give exactly one of --cut-height, --k");
    Run run(sub, *common);
    const auto [units, dist] = read_square_csv(*distances);
    run.input(*distances);
    const Dendrogram tree = complete_linkage(dist);
    const ClusterAssignment assignment = k_opt->count() ? cut_into(tree, *k) : cut_at_height(tree, *height);
    std::ofstream out = open_out(common->out);
    out << "unit,label\n";
    for (std::size_t i = 0; i < units.size(); ++i) out << units[i] << ',' << assignment.labels[i] << '\n';
    const std::string tree_path = sibling(common->out, "_dendrogram", ".json");
    open_out(tree_path) << dendrogram_to_json(tree);

    std::vector<int> sizes = assignment.sizes();
    std::sort(sizes.rbegin(), sizes.rend());
    json indices;
    if (assignment.clusters >= 2) {
      indices["davies_bouldin"] = davies_bouldin(assignment, dist);
      const double d = dunn(assignment, dist);
      indices["dunn"] = std::isinf(d) ? json("inf") : json(d);
    }
    std::printf("%d clusters; sizes", assignment.clusters);
    for (int s : sizes) std::printf(" %d", s);
    std::printf("\n");
    if (!indices.is_null()) std::printf("%s\n", indices.dump().c_str());
    run.output(common->out);
    run.output(tree_path);
    run.note("clusters", assignment.clusters);
    run.note("sizes_descending", sizes);
    if (!indices.is_null()) run.note("indices", indices);
    run.finish(manifest_for_file(common->out));
    exit_code = 0;
  });
}

// --- simulate / simstudy ----------------------------------------------------

std::vector<int> parse_ints(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument("");
    } catch (const std::logic_error&) {
      throw std::invalid_argument("bad integer list '" + text + "'");
    }
  }
  if (out.empty()) throw std::invalid_argument("empty integer list");
  return out;
}

void setup_simulate(CLI::App& app, int& exit_code) {
  auto* sub = app.add_subcommand("simulate", "Draw one data set from a simulation scenario");
  auto common = std::make_shared<CommonOptions>();
  auto scenario = std::make_shared<int>(1);
  auto n = std::make_shared<int>(100);
  auto rate = std::make_shared<int>(30);
  auto unit = std::make_shared<std::string>();
  sub->add_option("--unit", *unit, "Unit id written to the replication file (default: scenario<id>)");
  sub->add_option("--scenario", *scenario, "1 independent, 2 quadratic trend, 3 autoregressive")
      ->capture_default_str()
      ->check(CLI::Range(1, 3));
  sub->add_option("--n", *n, "Replications")->capture_default_str();
  sub->add_option("--rate", *rate, "Nominal baseline rate (10 or 30 in the study)")->capture_default_str();
  add_common(sub, *common);
  sub->callback([=, &exit_code] {
    Run run(sub, *common);
    ScenarioDraw draw = gen_scenario(ScenarioSpec::for_rate(scenario_from_int(*scenario), *n, *rate, common->seed));
    if (!unit->empty()) draw.data.unit = *unit;
    fs::create_directories(common->out);
    const std::string data_path = (fs::path(common->out) / "replications.json").string();
    const std::string truth_path = (fs::path(common->out) / "truth.json").string();
    save_replications(draw.data, data_path);
    open_out(truth_path) << truth_to_json(draw.truth);
    run.output(data_path);
    run.output(truth_path);
    run.note("events", draw.data.total());
    run.finish(manifest_for_dir(common->out));
    exit_code = 0;
  });
}

void setup_simstudy(CLI::App& app, int& exit_code) {
  auto* sub = app.add_subcommand("simstudy", "Monte Carlo study of estimation error over scenarios, n and rates");
  auto common = std::make_shared<CommonOptions>();
  auto scenarios = std::make_shared<std::string>("1,2,3");
  auto ns = std::make_shared<std::string>("50,100,200,400");
  auto rates = std::make_shared<std::string>("10,30");
  auto config = std::make_shared<MCConfig>();
  auto no_rescale = std::make_shared<bool>(false);
  sub->add_option("--scenarios", *scenarios, "Comma list")->capture_default_str();
  sub->add_option("--n", *ns, "Comma list of replication counts")->capture_default_str();
  sub->add_option("--rates", *rates, "Comma list of nominal rates")->capture_default_str();
  sub->add_option("--M", config->replicates, "Replicates per cell")->capture_default_str();
  sub->add_option("--grid", config->grid, "Evaluation grid points")->capture_default_str();
  sub->add_option("--xi1", config->xi1, "Roughness weight of the mean")->capture_default_str();
  sub->add_option("--xi2", config->xi2, "Roughness weight of the components")->capture_default_str();
  sub->add_flag("--no-rescale", *no_rescale, "Skip score rescaling");
  add_common(sub, *common);
  sub->callback([=, &exit_code] {
    Run run(sub, *common);
    MCConfig cfg = *config;
    cfg.scenarios = parse_ints(*scenarios);
    cfg.ns = parse_ints(*ns);
    cfg.rates = parse_ints(*rates);
    cfg.seed = common->seed;
    cfg.threads = common->threads;
    cfg.rescale = !*no_rescale;
    cfg.validate();
    const auto cells = run_study(cfg, [](const CellResult& c) {
      std::fprintf(stderr, "scenario %d n %d rate %d: mu rmse %.3f, phi1 %.3f, phi2 %.3f, failures %d\n", c.scenario,
                   c.n, c.rate, c.mu.rmse, c.phi.empty() ? NAN : c.phi[0].rmse, c.phi.size() < 2 ? NAN : c.phi[1].rmse,
                   c.failures);
    });
    fs::create_directories(common->out);
    const fs::path dir(common->out);
    std::ofstream errors = open_out((dir / "errors.csv").string());
    write_error_csv(errors, cells);
    std::ofstream score_file = open_out((dir / "scores.csv").string());
    write_score_csv(score_file, cells);
    std::ofstream summary = open_out((dir / "cells.csv").string());
    write_cell_summary_csv(summary, cells);
    json failures = json::array();
    for (const auto& c : cells) {
      for (const auto& m : c.failure_messages) {
        failures.push_back("scenario " + std::to_string(c.scenario) + " n " + std::to_string(c.n) + " rate " +
                           std::to_string(c.rate) + ": " + m);
      }
    }
    for (const char* f : {"errors.csv", "scores.csv", "cells.csv"}) run.output((dir / f).string());
    run.note("failures", failures);
    run.finish(manifest_for_dir(common->out));
    exit_code = 0;
  });
}

// --- report -----------------------------------------------------------------

void setup_report(CLI::App& app, int& exit_code) {
  auto* sub = app.add_subcommand("report", "Plot-ready curve and score series for fitted models");
  auto common = std::make_shared<CommonOptions>();
  auto models = std::make_shared<std::string>();
  auto points = std::make_shared<int>(241);
  sub->add_option("--models", *models, "Model JSON file or directory")->required()->check(CLI::ExistingPath);
  sub->add_option("--points", *points, "Grid points per curve")->capture_default_str()->check(CLI::Range(2, 100000));
  add_common(sub, *common);
  sub->callback([=, &exit_code] {
    Run run(sub, *common);
    std::vector<fs::path> files;
    if (fs::is_directory(*models)) {
      files = json_files(*models);
    } else {
      files.push_back(*models);
    }
    fs::create_directories(common->out);
    const fs::path dir(common->out);
    std::ofstream summary = open_out((dir / "summary.csv").string());
    summary << "unit,components,days,tau,baseline_integral,mean_daily_integral,converged\n";
    for (const auto& file : files) {
      const FitResult fit = load_model(file.string());
      run.input(file.string());
      const StationModel& m = fit.model;
      const std::string stem = safe_name(m.unit);
      const double baseline_integral = integrate(m.basis, [&](double t) { return m.baseline(t); });

      const std::string curves_path = (dir / (stem + "_curves.csv")).string();
      std::ofstream curves = open_out(curves_path);
      curves << "t,mean_log,baseline,baseline_density";
      for (int k = 0; k < m.components(); ++k) curves << ",phi" << k + 1;
      curves << '\n';
      for (int g = 0; g < *points; ++g) {
        const double t = m.basis.start() + (m.basis.end() - m.basis.start()) * g / (*points - 1);
        const double base = m.baseline(t);
        curves << g17(t) << ',' << g17(m.mean_log(t)) << ',' << g17(base) << ',' << g17(base / baseline_integral);
        for (int k = 0; k < m.components(); ++k) curves << ',' << g17(m.component(k, t));
        curves << '\n';
      }

      const std::string scores_path = (dir / (stem + "_scores.csv")).string();
      std::ofstream scores = open_out(scores_path);
      scores << "day";
      for (int k = 0; k < m.components(); ++k) scores << ",u" << k + 1;
      scores << '\n';
      for (int i = 0; i < m.days(); ++i) {
        scores << i;
        for (int k = 0; k < m.components(); ++k) scores << ',' << g17(m.U(i, k));
        scores << '\n';
      }
      const double daily = fit.diagnostics.day_integrals.size() ? fit.diagnostics.day_integrals.mean() : NAN;
      summary << m.unit << ',' << m.components() << ',' << m.days() << ',' << g17(m.tau) << ','
              << g17(baseline_integral) << ',' << g17(daily) << ',' << (fit.diagnostics.converged ? 1 : 0) << '\n';
      run.output(curves_path);
      run.output(scores_path);
    }
    run.output((dir / "summary.csv").string());
    run.finish(manifest_for_dir(common->out));
    exit_code = 0;
  });
}

}  // namespace

void register_commands(CLI::App& app, int& exit_code) {
  app.set_version_flag("--version", kVersion);
  setup_ingest(app, exit_code);
  setup_fit(app, exit_code);
  setup_crossval(app, exit_code);
  setup_correlate(app, exit_code);
  setup_cluster(app, exit_code);
  setup_simulate(app, exit_code);
  setup_simstudy(app, exit_code);
  setup_report(app, exit_code);
}

}  // namespace ppf::cli
