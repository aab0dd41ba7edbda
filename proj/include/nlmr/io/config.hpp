#ifndef NLMR_IO_CONFIG_HPP
#define NLMR_IO_CONFIG_HPP

// TOML run configuration (schema_version = 1) and its JSON echo.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <tomlplusplus/toml.hpp>

#include "nlmr/data.hpp"
#include "nlmr/error.hpp"
#include "nlmr/simkit.hpp"

namespace nlmr::io {

inline constexpr std::int64_t kSchemaVersion = 1;

struct DataConfig {
  std::string path;
  std::vector<std::string> instruments;
  std::vector<std::string> covariates;
  std::string exposure;
  std::string outcome;
  std::string family = "gaussian";
};

struct ModelConfig {
  std::vector<std::string> f{"linear"};
  std::string h = "identity";
  bool include_iv = false;
};

struct SpmrConfig {
  int k = 10;
  int degree = 3;
  std::string knots = "quantile";
  std::optional<double> lambda;
  bool smooth_covariates = false;
  bool smooth_delta = false;
};

struct OutputConfig {
  std::string report = "report.json";
  std::optional<std::string> curve;
  std::optional<std::string> summary;
};

struct SimulateConfig {
  std::vector<std::string> methods{"control_fn"};
  std::vector<std::string> causal_f{"quad3"};
  std::vector<double> pve{0.1};
  std::vector<int> n{1000};
  int replicates = 100;
  std::string pleiotropy = "none";
  std::string h_form = "identity";
  std::string family = "gaussian";
  double exposure_intercept = 1.0;
  double beta_zu = 1.0;
  double beta_zy = 1.0;
  int num_covariates = 1;
  std::optional<std::string> export_dataset;
};

struct AnalysisConfig {
  std::int64_t schema_version = kSchemaVersion;
  std::uint64_t seed = 1;
  std::optional<DataConfig> data;
  std::string method = "control_fn";
  ModelConfig model;
  SpmrConfig spmr;
  OutputConfig output;
  std::optional<SimulateConfig> simulate;
};

inline const std::set<std::string>& known_methods() {
  static const std::set<std::string> m{"twostage_pred",     "control_fn", "control_fn_pleio", "control_fn_h",
                                       "control_fn_binary", "spmr",       "linear_mr"};
  return m;
}

namespace detail {

[[noreturn]] inline void invalid(const std::string& field, const std::string& msg) {
  throw Error(ErrorKind::ConfigInvalid, "io", field + ": " + msg);
}

inline void reject_unknown(const toml::table& t, const std::string& prefix, const std::set<std::string>& allowed) {
  for (auto&& [key, node] : t) {
    const std::string k(key.str());
    if (!allowed.count(k)) invalid(prefix.empty() ? k : prefix + "." + k, "unknown key");
  }
}

class Reader {
 public:
  Reader(const toml::table& t, std::string prefix) : t_(t), prefix_(std::move(prefix)) {}

  std::string path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }
  bool has(const std::string& key) const { return t_.contains(key); }

  std::string str(const std::string& key, std::optional<std::string> fallback = std::nullopt) const {
    if (!has(key)) return require(key, fallback);
    auto v = t_[key].value<std::string>();
    if (!v || !t_[key].is_string()) invalid(path(key), "expected a string");
    return *v;
  }
  double real(const std::string& key, std::optional<double> fallback = std::nullopt) const {
    if (!has(key)) return require(key, fallback);
    if (!t_[key].is_number()) invalid(path(key), "expected a number");
    return *t_[key].value<double>();
  }
  std::int64_t integer(const std::string& key, std::optional<std::int64_t> fallback = std::nullopt) const {
    if (!has(key)) return require(key, fallback);
    if (!t_[key].is_integer()) invalid(path(key), "expected an integer");
    return *t_[key].value<std::int64_t>();
  }
  bool boolean(const std::string& key, std::optional<bool> fallback = std::nullopt) const {
    if (!has(key)) return require(key, fallback);
    if (!t_[key].is_boolean()) invalid(path(key), "expected true or false");
    return *t_[key].value<bool>();
  }
  std::vector<std::string> strings(const std::string& key,
                                   std::optional<std::vector<std::string>> fallback = std::nullopt) const {
    if (!has(key)) return require(key, fallback);
    const toml::array* a = t_[key].as_array();
    if (!a) invalid(path(key), "expected an array of strings");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < a->size(); ++i) {
      auto v = (*a)[i].value<std::string>();
      if (!v || !(*a)[i].is_string()) invalid(path(key) + "[" + std::to_string(i) + "]", "expected a string");
      out.push_back(*v);
    }
    return out;
  }
  std::vector<double> reals(const std::string& key, std::optional<std::vector<double>> fallback = std::nullopt) const {
    if (!has(key)) return require(key, fallback);
    const toml::array* a = t_[key].as_array();
    if (!a) invalid(path(key), "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < a->size(); ++i) {
      if (!(*a)[i].is_number()) invalid(path(key) + "[" + std::to_string(i) + "]", "expected a number");
      out.push_back(*(*a)[i].value<double>());
    }
    return out;
  }
  std::vector<int> integers(const std::string& key, std::optional<std::vector<int>> fallback = std::nullopt) const {
    if (!has(key)) return require(key, fallback);
    const toml::array* a = t_[key].as_array();
    if (!a) invalid(path(key), "expected an array of integers");
    std::vector<int> out;
    for (std::size_t i = 0; i < a->size(); ++i) {
      if (!(*a)[i].is_integer()) invalid(path(key) + "[" + std::to_string(i) + "]", "expected an integer");
      out.push_back(static_cast<int>(*(*a)[i].value<std::int64_t>()));
    }
    return out;
  }

 private:
  template <class T>
  T require(const std::string& key, const std::optional<T>& fallback) const {
    if (!fallback) invalid(path(key), "required key is missing");
    return *fallback;
  }

  const toml::table& t_;
  std::string prefix_;
};

inline const toml::table* subtable(const toml::table& root, const std::string& name) {
  if (!root.contains(name)) return nullptr;
  const toml::table* t = root[name].as_table();
  if (!t) invalid(name, "expected a table");
  return t;
}

inline std::string resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return (path.is_absolute() || base.empty()) ? p : (base / path).lexically_normal().string();
}

}  // namespace detail

// Checks cross-field constraints; every message starts with the field path.
inline void validate(const AnalysisConfig& c) {
  using detail::invalid;
  if (c.schema_version != kSchemaVersion) {
    invalid("schema_version", "unsupported version " + std::to_string(c.schema_version) + " (expected " +
                                  std::to_string(kSchemaVersion) + ")");
  }
  if (!known_methods().count(c.method)) invalid("method.id", "unknown method '" + c.method + "'");
  if (c.data) {
    if (c.data->path.empty()) invalid("data.path", "must not be empty");
    if (c.data->instruments.empty()) invalid("data.instruments", "at least one instrument column is required");
    if (c.data->exposure.empty()) invalid("data.exposure", "must not be empty");
    if (c.data->outcome.empty()) invalid("data.outcome", "must not be empty");
    if (c.data->family != "gaussian" && c.data->family != "binomial") invalid("data.family", "must be gaussian or binomial");
  }
  if (c.model.f.empty()) invalid("model.f", "at least one basis function is required");
  for (std::size_t i = 0; i < c.model.f.size(); ++i) {
    try {
      (void)transform_by_name(c.model.f[i]);
    } catch (const Error&) {
      invalid("model.f[" + std::to_string(i) + "]", "unknown function '" + c.model.f[i] + "'");
    }
  }
  try {
    (void)transform_by_name(c.model.h);
  } catch (const Error&) {
    invalid("model.h", "unknown function '" + c.model.h + "'");
  }
  if (c.spmr.k < 4) invalid("spmr.k", "must be >= 4");
  if (c.spmr.degree < 1 || c.spmr.degree >= c.spmr.k) invalid("spmr.degree", "must lie in [1, k)");
  if (c.spmr.knots != "quantile" && c.spmr.knots != "uniform") invalid("spmr.knots", "must be quantile or uniform");
  if (c.spmr.lambda && !(*c.spmr.lambda >= 0.0)) invalid("spmr.lambda", "must be >= 0");
  if (c.output.report.empty()) invalid("output.report", "must not be empty");
  if (c.simulate) {
    const SimulateConfig& s = *c.simulate;
    if (s.methods.empty()) invalid("simulate.methods", "at least one method is required");
    for (std::size_t i = 0; i < s.methods.size(); ++i) {
      if (!known_methods().count(s.methods[i])) {
        invalid("simulate.methods[" + std::to_string(i) + "]", "unknown method '" + s.methods[i] + "'");
      }
    }
    if (s.causal_f.empty()) invalid("simulate.causal_f", "at least one causal function is required");
    for (std::size_t i = 0; i < s.causal_f.size(); ++i) {
      const auto& f = s.causal_f[i];
      if (f != "linear" && f != "quad3" && f != "sin" && f != "exp3" && f != "null") {
        invalid("simulate.causal_f[" + std::to_string(i) + "]", "must be linear, quad3, sin, exp3 or null");
      }
    }
    if (s.pve.empty()) invalid("simulate.pve", "at least one value is required");
    for (std::size_t i = 0; i < s.pve.size(); ++i) {
      if (!(s.pve[i] > 0.0 && s.pve[i] < 1.0)) invalid("simulate.pve[" + std::to_string(i) + "]", "must lie in (0, 1)");
    }
    if (s.n.empty()) invalid("simulate.n", "at least one sample size is required");
    for (std::size_t i = 0; i < s.n.size(); ++i) {
      if (s.n[i] < 10) invalid("simulate.n[" + std::to_string(i) + "]", "must be >= 10");
    }
    if (s.replicates < 1) invalid("simulate.replicates", "must be >= 1");
    try {
      (void)pleiotropy_from_string(s.pleiotropy);
    } catch (const Error&) {
      invalid("simulate.pleiotropy", "must be none, uncorrelated, correlated or both");
    }
    try {
      (void)transform_by_name(s.h_form);
    } catch (const Error&) {
      invalid("simulate.h_form", "unknown function '" + s.h_form + "'");
    }
    if (s.family != "gaussian" && s.family != "binomial") invalid("simulate.family", "must be gaussian or binomial");
    if (s.num_covariates < 0) invalid("simulate.num_covariates", "must be >= 0");
  }
}

// Relative paths are resolved against `base_dir` (the config file's directory).
inline AnalysisConfig parse_config_string(const std::string& text, const std::filesystem::path& base_dir = {}) {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    const auto& src = e.source();
    detail::invalid("<toml>", std::string(e.description()) + " at line " + std::to_string(src.begin.line) + ", column " +
                                  std::to_string(src.begin.column));
  }
  detail::reject_unknown(root, "", {"schema_version", "seed", "data", "method", "model", "spmr", "output", "simulate"});

  AnalysisConfig c;
  const detail::Reader top(root, "");
  if (!top.has("schema_version")) detail::invalid("schema_version", "required key is missing");
  c.schema_version = top.integer("schema_version");
  const std::int64_t seed = top.integer("seed", 1);
  if (seed < 0) detail::invalid("seed", "must be non-negative");
  c.seed = static_cast<std::uint64_t>(seed);

  if (const toml::table* t = detail::subtable(root, "data")) {
    detail::reject_unknown(*t, "data", {"path", "instruments", "covariates", "exposure", "outcome", "family"});
    const detail::Reader r(*t, "data");
    DataConfig d;
    d.path = detail::resolve(base_dir, r.str("path"));
    d.instruments = r.strings("instruments");
    d.covariates = r.strings("covariates", std::vector<std::string>{});
    d.exposure = r.str("exposure");
    d.outcome = r.str("outcome");
    d.family = r.str("family", "gaussian");
    c.data = d;
  }
  if (const toml::table* t = detail::subtable(root, "method")) {
    detail::reject_unknown(*t, "method", {"id"});
    c.method = detail::Reader(*t, "method").str("id");
  }
  if (const toml::table* t = detail::subtable(root, "model")) {
    detail::reject_unknown(*t, "model", {"f", "h", "include_iv"});
    const detail::Reader r(*t, "model");
    c.model.f = r.strings("f", c.model.f);
    c.model.h = r.str("h", c.model.h);
    c.model.include_iv = r.boolean("include_iv", c.model.include_iv);
  }
  if (const toml::table* t = detail::subtable(root, "spmr")) {
    detail::reject_unknown(*t, "spmr", {"k", "degree", "knots", "lambda", "smooth_covariates", "smooth_delta"});
    const detail::Reader r(*t, "spmr");
    c.spmr.k = static_cast<int>(r.integer("k", c.spmr.k));
    c.spmr.degree = static_cast<int>(r.integer("degree", c.spmr.degree));
    c.spmr.knots = r.str("knots", c.spmr.knots);
    if (r.has("lambda")) c.spmr.lambda = r.real("lambda");
    c.spmr.smooth_covariates = r.boolean("smooth_covariates", false);
    c.spmr.smooth_delta = r.boolean("smooth_delta", false);
  }
  if (const toml::table* t = detail::subtable(root, "output")) {
    detail::reject_unknown(*t, "output", {"report", "curve", "summary"});
    const detail::Reader r(*t, "output");
    c.output.report = detail::resolve(base_dir, r.str("report", c.output.report));
    if (r.has("curve")) c.output.curve = detail::resolve(base_dir, r.str("curve"));
    if (r.has("summary")) c.output.summary = detail::resolve(base_dir, r.str("summary"));
  } else {
    c.output.report = detail::resolve(base_dir, c.output.report);
  }
  if (const toml::table* t = detail::subtable(root, "simulate")) {
    detail::reject_unknown(*t, "simulate",
                           {"methods", "causal_f", "pve", "n", "replicates", "pleiotropy", "h_form", "family",
                            "exposure_intercept", "beta_zu", "beta_zy", "num_covariates", "export_dataset"});
    const detail::Reader r(*t, "simulate");
    SimulateConfig s;
    s.methods = r.strings("methods", s.methods);
    s.causal_f = r.strings("causal_f", s.causal_f);
    s.pve = r.reals("pve", s.pve);
    s.n = r.integers("n", s.n);
    s.replicates = static_cast<int>(r.integer("replicates", s.replicates));
    s.pleiotropy = r.str("pleiotropy", s.pleiotropy);
    s.h_form = r.str("h_form", s.h_form);
    s.family = r.str("family", s.family);
    s.exposure_intercept = r.real("exposure_intercept", s.exposure_intercept);
    s.beta_zu = r.real("beta_zu", s.beta_zu);
    s.beta_zy = r.real("beta_zy", s.beta_zy);
    s.num_covariates = static_cast<int>(r.integer("num_covariates", s.num_covariates));
    if (r.has("export_dataset")) s.export_dataset = detail::resolve(base_dir, r.str("export_dataset"));
    c.simulate = s;
  }
  validate(c);
  return c;
}

inline AnalysisConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) detail::invalid("<file>", "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_string(ss.str(), std::filesystem::path(path).parent_path());
}

// JSON echo of the effective configuration; config_from_json inverts it.
inline nlohmann::json to_json(const AnalysisConfig& c) {
  nlohmann::json j;
  j["schema_version"] = c.schema_version;
  j["seed"] = c.seed;
  j["method"] = c.method;
  if (c.data) {
    j["data"] = {{"path", c.data->path},         {"instruments", c.data->instruments},
                 {"covariates", c.data->covariates}, {"exposure", c.data->exposure},
                 {"outcome", c.data->outcome},   {"family", c.data->family}};
  }
  j["model"] = {{"f", c.model.f}, {"h", c.model.h}, {"include_iv", c.model.include_iv}};
  j["spmr"] = {{"k", c.spmr.k},
               {"degree", c.spmr.degree},
               {"knots", c.spmr.knots},
               {"lambda", c.spmr.lambda ? nlohmann::json(*c.spmr.lambda) : nlohmann::json(nullptr)},
               {"smooth_covariates", c.spmr.smooth_covariates},
               {"smooth_delta", c.spmr.smooth_delta}};
  auto opt_str = [](const std::optional<std::string>& s) { return s ? nlohmann::json(*s) : nlohmann::json(nullptr); };
  j["output"] = {{"report", c.output.report}, {"curve", opt_str(c.output.curve)}, {"summary", opt_str(c.output.summary)}};
  if (c.simulate) {
    const SimulateConfig& s = *c.simulate;
    j["simulate"] = {{"methods", s.methods},
                     {"causal_f", s.causal_f},
                     {"pve", s.pve},
                     {"n", s.n},
                     {"replicates", s.replicates},
                     {"pleiotropy", s.pleiotropy},
                     {"h_form", s.h_form},
                     {"family", s.family},
                     {"exposure_intercept", s.exposure_intercept},
                     {"beta_zu", s.beta_zu},
                     {"beta_zy", s.beta_zy},
                     {"num_covariates", s.num_covariates},
                     {"export_dataset", opt_str(s.export_dataset)}};
  }
  return j;
}

inline AnalysisConfig config_from_json(const nlohmann::json& j) {
  try {
    AnalysisConfig c;
    c.schema_version = j.at("schema_version").get<std::int64_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.method = j.at("method").get<std::string>();
    if (j.contains("data")) {
      const auto& d = j.at("data");
      c.data = DataConfig{d.at("path"),     d.at("instruments"), d.at("covariates"),
                          d.at("exposure"), d.at("outcome"),     d.at("family")};
    }
    const auto& m = j.at("model");
    c.model = ModelConfig{m.at("f"), m.at("h"), m.at("include_iv")};
    const auto& s = j.at("spmr");
    c.spmr.k = s.at("k");
    c.spmr.degree = s.at("degree");
    c.spmr.knots = s.at("knots");
    if (!s.at("lambda").is_null()) c.spmr.lambda = s.at("lambda").get<double>();
    c.spmr.smooth_covariates = s.at("smooth_covariates");
    c.spmr.smooth_delta = s.at("smooth_delta");
    auto opt_str = [](const nlohmann::json& v) {
      return v.is_null() ? std::optional<std::string>{} : std::optional<std::string>{v.get<std::string>()};
    };
    const auto& o = j.at("output");
    c.output.report = o.at("report");
    c.output.curve = opt_str(o.at("curve"));
    c.output.summary = opt_str(o.at("summary"));
    if (j.contains("simulate")) {
      const auto& q = j.at("simulate");
      SimulateConfig sc;
      sc.methods = q.at("methods");
      sc.causal_f = q.at("causal_f");
      sc.pve = q.at("pve").get<std::vector<double>>();
      sc.n = q.at("n").get<std::vector<int>>();
      sc.replicates = q.at("replicates");
      sc.pleiotropy = q.at("pleiotropy");
      sc.h_form = q.at("h_form");
      sc.family = q.at("family");
      sc.exposure_intercept = q.at("exposure_intercept");
      sc.beta_zu = q.at("beta_zu");
      sc.beta_zy = q.at("beta_zy");
      sc.num_covariates = q.at("num_covariates");
      sc.export_dataset = opt_str(q.at("export_dataset"));
      c.simulate = sc;
    }
    validate(c);
    return c;
  } catch (const nlohmann::json::exception& e) {
    detail::invalid("<json>", e.what());
  }
}

}  // namespace nlmr::io

#endif  // NLMR_IO_CONFIG_HPP
