#pragma once

// HTTP/JSON facade over the surrogate and its analyses. One immutable model
// per process; the saved-parameter list is the only mutable shared state.

#include <atomic>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <httplib.h>

#include "cellsteer/analysis.hpp"
#include "cellsteer/clustering.hpp"
#include "cellsteer/json_io.hpp"
#include "cellsteer/model_io.hpp"
#include "cellsteer/sim_oracle.hpp"

namespace cellsteer {

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  /// MC-dropout sample count when a request omits T.
  long long default_samples = 50;
  /// Upper bound on optimization steps per request.
  std::size_t max_steps = 20000;
  /// Saved list is loaded from here at start and written back on shutdown.
  std::filesystem::path saved_list_path;
  /// Optional directory of static UI assets mounted at /.
  std::filesystem::path static_dir;
};

struct SavedEntry {
  std::string name;
  ParameterConfig config{};
  Origin origin = Origin::manual;
};

inline json to_json(const SavedEntry &e) {
  return {{"name", e.name}, {"config", as_vector(e.config)}, {"origin", to_string(e.origin)}};
}

inline SavedEntry saved_entry_from_json(const json &j) {
  if (!j.is_object())
    fail(ErrorKind::invalid_argument, "entry must be an object", "entry");
  SavedEntry e;
  e.name = j.value("name", std::string{});
  e.config = config_from_json(j.contains("config") ? j.at("config") : json(), "config");
  e.origin = origin_from_string(j.value("origin", std::string("manual")));
  return e;
}

inline std::vector<SavedEntry> load_saved_list(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    fail(ErrorKind::io, "cannot open " + path.string(), "list");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception &e) {
    fail(ErrorKind::corrupt_file, path.string() + ": " + e.what(), "list");
  }
  std::vector<SavedEntry> out;
  for (const auto &j : doc.at("entries"))
    out.push_back(saved_entry_from_json(j));
  return out;
}

inline void store_saved_list(const std::vector<SavedEntry> &entries,
                             const std::filesystem::path &path) {
  json arr = json::array();
  for (const auto &e : entries)
    arr.push_back(to_json(e));
  csv::write_text(path, json{{"entries", arr}}.dump(2) + "\n");
}

/// Everything the instance view shows for one dataset row.
struct InstanceView {
  std::size_t id = 0;
  ParameterConfig config{};
  ConcentrationProfile simulated{};
  double simulated_pf = 0.0;
  ConcentrationProfile predicted{};
  UncertaintyEstimate uncertainty;
  SensitivityMap sensitivity;
};

class Service {
public:
  Service(std::optional<ModelFile> model, ParameterSpace space, std::optional<Dataset> dataset = {},
          ServiceOptions options = {})
      : model_(std::move(model)), space_(std::move(space)), dataset_(std::move(dataset)),
        options_(std::move(options)) {
    if (model_)
      hash_ = model_hash(model_->model);
    if (!options_.saved_list_path.empty() && std::filesystem::exists(options_.saved_list_path))
      saved_ = load_saved_list(options_.saved_list_path);
    if (model_ && dataset_ && !dataset_->empty())
      current_instance_ = static_cast<long long>(instance(0).id);
  }

  const ServiceOptions &options() const noexcept { return options_; }
  const std::string &hash() const noexcept { return hash_; }

  /// Registers every endpoint on `server`.
  void bind(httplib::Server &server) {
    server.Get("/model/meta", wrap([this](const httplib::Request &) { return meta(); }));
    server.Post("/predict", wrap_body([this](const json &b) { return predict(b); }));
    server.Post("/predict_uncertain", wrap_body([this](const json &b) { return predict_uncertain(b); }));
    server.Post("/sensitivity", wrap_body([this](const json &b) { return sensitivity(b); }));
    server.Post("/optimize", wrap_body([this](const json &b) { return optimize(b); }));
    server.Post("/diff", wrap_body([this](const json &b) { return diff(b); }));
    server.Get(R"(/instance/(\d+))", wrap([this](const httplib::Request &r) {
                 return instance_json(parse_index(r.matches[1], "id"));
               }));
    server.Get("/clusters/spatial", wrap([this](const httplib::Request &r) {
                 return spatial_clusters_json(query_index(r, "instance"),
                                              r.has_param("mode") ? r.get_param_value("mode") : "value");
               }));
    server.Get("/clusters/params", wrap([this](const httplib::Request &r) {
                 return parameter_clusters_json(query_index(r, "instance"));
               }));
    server.Get(R"(/weights/(\d+))", wrap([this](const httplib::Request &r) {
                 const bool sorted = r.has_param("sorted") && r.get_param_value("sorted") == "1";
                 return weights_json(parse_index(r.matches[1], "layer"), sorted);
               }));
    server.Get(R"(/weights/(\d+)/row/(\d+))", wrap([this](const httplib::Request &r) {
                 return weight_row_json(parse_index(r.matches[1], "layer"),
                                        parse_index(r.matches[2], "row"));
               }));
    server.Post("/weights/pattern", wrap_body([this](const json &b) { return pattern(b); }));
    server.Post("/params/save", wrap_body([this](const json &b) { return save_params(b); }));
    server.Get("/params/list", wrap([this](const httplib::Request &) { return list_params(); }));
    server.Delete(R"(/params/(\d+))", wrap([this](const httplib::Request &r) {
                    return delete_params(parse_index(r.matches[1], "index"));
                  }));
    server.Get("/params/export", [this](const httplib::Request &, httplib::Response &res) {
      try {
        res.set_content(export_params(), "text/csv");
        res.set_header("Content-Disposition", "attachment; filename=\"parameters.csv\"");
      } catch (const std::exception &e) {
        write_error(res, e);
      }
    });
    if (!options_.static_dir.empty())
      server.set_mount_point("/", options_.static_dir.string());
  }

  /// Serves until stop() is called on the server; persists the saved list.
  bool run(httplib::Server &server) {
    bind(server);
    const bool ok = server.listen(options_.host, options_.port);
    persist();
    return ok;
  }

  void persist() const {
    if (options_.saved_list_path.empty())
      return;
    std::lock_guard lock(saved_mutex_);
    store_saved_list(saved_, options_.saved_list_path);
  }

  // ---- endpoint bodies (JSON in, JSON out) -----------------------------------

  json meta() const {
    const auto &m = require_model();
    json widths = m.model.widths();
    json dropout = json::array(), activations = json::array();
    for (const auto &l : m.model.layers()) {
      dropout.push_back(l.dropout_rate);
      activations.push_back(to_string(l.activation));
    }
    json params = json::array();
    for (const auto &e : space_.entries())
      params.push_back({{"name", e.name}, {"raw_lo", e.raw_lo}, {"raw_hi", e.raw_hi}});
    json training = json::object();
    for (const auto &[k, v] : m.metadata)
      training[k] = v;
    return {{"layers", widths},         {"dropout", dropout},
            {"activations", activations}, {"parameters", params},
            {"training", training},     {"hash", hash_},
            {"instances", dataset_ ? dataset_->size() : 0}};
  }

  json predict(const json &body) const {
    const auto &m = require_model();
    const auto config = config_from_json(field(body, "config"));
    return {{"profile", as_vector(cellsteer::predict(m.model, config))},
            {"out_of_range", !in_unit_box(config)}};
  }

  json predict_uncertain(const json &body) const {
    const auto &m = require_model();
    const auto config = config_from_json(field(body, "config"));
    const long long t = integer_field(body, "T", options_.default_samples);
    const auto seed = static_cast<std::uint64_t>(integer_field(body, "seed", 0));
    const auto est = mc_dropout_predict(m.model, config, t, seed);
    return {{"mean", est.mean}, {"std", est.std}, {"T", est.samples}, {"seed", seed}};
  }

  json sensitivity(const json &body) const {
    const auto &m = require_model();
    const auto config = config_from_json(field(body, "config"));
    const auto map = cellsteer::sensitivity(m.model, config);
    json out = {{"map", to_json(map.values)["data"]},
                {"averages", avg_sensitivity(map, RegionMask::all(map.values.rows()))}};
    if (body.contains("mask") && !body.at("mask").is_null()) {
      const auto mask = mask_from_json(body.at("mask"), "mask", map.values.rows());
      if (mask.empty())
        fail(ErrorKind::invalid_argument, "mask selects no locations", "mask");
      out["averages_selected"] = avg_sensitivity(map, mask);
    }
    return out;
  }

  json optimize(const json &body) const {
    const auto &m = require_model();
    OptimizationRequest req;
    req.max_mask = mask_from_json(body.value("max_mask", json()), "max_mask");
    req.min_mask = mask_from_json(body.value("min_mask", json()), "min_mask");
    if (req.max_mask.overlaps(req.min_mask))
      fail(ErrorKind::invalid_argument, "max_mask and min_mask overlap", "min_mask");
    req.anchor = body.contains("anchor") ? as_vector(config_from_json(body.at("anchor"), "anchor"))
                                         : std::vector<double>(kNumParams, 0.0);
    req.lambda = number_field(body, "lambda", req.lambda);
    req.step_size = number_field(body, "step_size", req.step_size);
    const long long steps = integer_field(body, "steps", static_cast<long long>(req.steps));
    if (steps < 1)
      fail(ErrorKind::invalid_argument, "steps must be >= 1", "steps");
    if (static_cast<std::size_t>(steps) > options_.max_steps)
      fail(ErrorKind::invalid_argument,
           "steps exceeds the per-request cap of " + std::to_string(options_.max_steps), "steps");
    req.steps = static_cast<std::size_t>(steps);
    const auto res = activation_optimize(m.model, req);
    return {{"optimum", res.optimum},   {"trajectory", res.trajectory},
            {"profile", res.profile},   {"objective", res.best_objective},
            {"origin", to_string(origin_of(req))}};
  }

  json diff(const json &body) const {
    const auto &m = require_model();
    const auto a = cellsteer::predict(m.model, config_from_json(field(body, "configA"), "configA"));
    const auto b = cellsteer::predict(m.model, config_from_json(field(body, "configB"), "configB"));
    std::vector<double> delta(kNumCells);
    for (std::size_t i = 0; i < kNumCells; ++i)
      delta[i] = a[i] - b[i];
    return {{"delta", delta}};
  }

  InstanceView instance(std::size_t id) const {
    const auto &m = require_model();
    if (!dataset_ || id >= dataset_->size())
      fail(ErrorKind::not_found, "unknown instance " + std::to_string(id), "id");
    {
      std::shared_lock lock(cache_mutex_);
      if (auto it = instances_.find(id); it != instances_.end())
        return it->second;
    }
    InstanceView v;
    v.id = id;
    v.config = dataset_->configs[id];
    v.simulated = dataset_->profiles[id];
    v.simulated_pf = dataset_->pf[id];
    v.predicted = cellsteer::predict(m.model, v.config);
    v.uncertainty = mc_dropout_predict(m.model, v.config, options_.default_samples, 0);
    v.sensitivity = cellsteer::sensitivity(m.model, v.config);
    std::unique_lock lock(cache_mutex_);
    return instances_.emplace(id, std::move(v)).first->second;
  }

  json instance_json(std::size_t id) {
    const auto v = instance(id);
    current_instance_ = static_cast<long long>(id);
    return {{"id", v.id},
            {"config", as_vector(v.config)},
            {"simulated", as_vector(v.simulated)},
            {"simulated_pf", v.simulated_pf},
            {"predicted", as_vector(v.predicted)},
            {"mean", v.uncertainty.mean},
            {"std", v.uncertainty.std},
            {"T", v.uncertainty.samples},
            {"sensitivity", to_json(v.sensitivity.values)["data"]},
            {"averages", avg_sensitivity(v.sensitivity, RegionMask::all())}};
  }

  json spatial_clusters_json(std::size_t id, const std::string &mode) const {
    SpatialFeatureWeights w;
    if (mode == "value")
      w = SpatialFeatureWeights::value_only();
    else if (mode == "uncertainty")
      w = SpatialFeatureWeights::uncertainty_only();
    else if (mode != "combined")
      fail(ErrorKind::invalid_argument, "mode must be value, uncertainty or combined", "mode");
    return cached("spatial/" + std::to_string(id) + "/" + mode, [&] {
      const auto v = instance(id);
      return to_json(cellsteer::spatial_clusters(v.uncertainty.mean, v.uncertainty.std, w));
    });
  }

  json parameter_clusters_json(std::size_t id) const {
    return cached("params/" + std::to_string(id), [&] {
      return to_json(cellsteer::parameter_clusters(instance(id).sensitivity));
    });
  }

  json weights_json(std::size_t layer, bool sorted) const {
    const auto &m = require_model();
    return cached("weights/" + std::to_string(layer) + (sorted ? "/sorted" : ""), [&] {
      auto w = weight_matrix(m.model, layer);
      return to_json(sorted ? sort_rows(std::move(w)) : w);
    });
  }

  json weight_row_json(std::size_t layer, std::size_t row) const {
    const auto &m = require_model();
    const auto w = weight_matrix(m.model, layer);
    if (row >= w.rows())
      fail(ErrorKind::not_found, "row " + std::to_string(row) + " outside the matrix", "row");
    return {{"layer", layer},
            {"row", row},
            {"values", std::vector<double>(w.row(row).begin(), w.row(row).end())}};
  }

  /// Rows of weight matrix `layer` (neurons of the layer feeding it) with a
  /// high mean over the column window, and their hidden-layer sensitivity.
  json pattern(const json &body) const {
    const auto &m = require_model();
    const long long layer = integer_field(body, "layer", static_cast<long long>(m.model.depth() - 1));
    if (layer < 1 || static_cast<std::size_t>(layer) >= m.model.depth())
      fail(ErrorKind::invalid_argument, "layer must select a matrix fed by a hidden layer", "layer");
    const auto w = weight_matrix(m.model, static_cast<std::size_t>(layer));
    const auto win = field(body, "window");
    if (!win.is_array() || win.size() != 2 || !win[0].is_number_integer() || !win[1].is_number_integer())
      fail(ErrorKind::invalid_argument, "window must be [first, last]", "window");
    const long long first = win[0].get<long long>(), last = win[1].get<long long>();
    if (first < 0 || last < 0 || first >= static_cast<long long>(w.cols()) ||
        last >= static_cast<long long>(w.cols()))
      fail(ErrorKind::invalid_argument, "window outside the matrix columns", "window");
    const double q = number_field(body, "quantile", 0.81);
    const auto rows = row_pattern_query(
        w, {static_cast<std::size_t>(first), static_cast<std::size_t>(last)}, q);
    ParameterConfig config{};
    if (body.contains("config"))
      config = config_from_json(body.at("config"));
    else if (body.contains("instance"))
      config = instance(static_cast<std::size_t>(integer_field(body, "instance", 0))).config;
    else if (const auto cur = current_instance_.load(); dataset_ && cur >= 0)
      config = dataset_->configs[static_cast<std::size_t>(cur)];
    json out = {{"indices", rows}, {"config", as_vector(config)}};
    out["hidden_sensitivity"] =
        rows.empty() ? std::vector<double>(kNumParams, 0.0)
                     : hidden_sensitivity(m.model, config, static_cast<std::size_t>(layer) - 1, rows);
    return out;
  }

  json save_params(const json &body) {
    SavedEntry e = saved_entry_from_json(body);
    std::lock_guard lock(saved_mutex_);
    saved_.push_back(std::move(e));
    return {{"index", saved_.size() - 1}, {"count", saved_.size()}};
  }

  json list_params() const {
    std::lock_guard lock(saved_mutex_);
    json arr = json::array();
    for (const auto &e : saved_)
      arr.push_back(to_json(e));
    return {{"entries", arr}};
  }

  json delete_params(std::size_t index) {
    std::lock_guard lock(saved_mutex_);
    if (index >= saved_.size())
      fail(ErrorKind::not_found, "no saved entry " + std::to_string(index), "index");
    saved_.erase(saved_.begin() + static_cast<std::ptrdiff_t>(index));
    return {{"count", saved_.size()}};
  }

  std::string export_params() const {
    std::lock_guard lock(saved_mutex_);
    if (saved_.empty())
      fail(ErrorKind::conflict, "the saved parameter list is empty", "list");
    std::vector<ParameterConfig> configs;
    for (const auto &e : saved_)
      configs.push_back(e.config);
    return format_configs(configs, space_);
  }

private:
  const ModelFile &require_model() const {
    if (!model_)
      throw Unavailable();
    return *model_;
  }

  struct Unavailable : std::runtime_error {
    Unavailable() : std::runtime_error("no model loaded") {}
  };

  template <class F> json cached(const std::string &key, F &&compute) const {
    {
      std::shared_lock lock(cache_mutex_);
      if (auto it = cache_.find(key); it != cache_.end())
        return it->second;
    }
    json value = compute();
    std::unique_lock lock(cache_mutex_);
    return cache_.emplace(key, std::move(value)).first->second;
  }

  static const json &field(const json &body, const char *name) {
    if (!body.is_object() || !body.contains(name))
      fail(ErrorKind::invalid_argument, std::string("missing field '") + name + "'", name);
    return body.at(name);
  }

  static long long integer_field(const json &body, const char *name, long long fallback) {
    if (!body.is_object() || !body.contains(name) || body.at(name).is_null())
      return fallback;
    const auto &v = body.at(name);
    if (!v.is_number_integer())
      fail(ErrorKind::invalid_argument, std::string(name) + " must be an integer", name);
    return v.get<long long>();
  }

  static double number_field(const json &body, const char *name, double fallback) {
    if (!body.is_object() || !body.contains(name) || body.at(name).is_null())
      return fallback;
    const auto &v = body.at(name);
    if (!v.is_number() || !std::isfinite(v.get<double>()))
      fail(ErrorKind::invalid_argument, std::string(name) + " must be a finite number", name);
    return v.get<double>();
  }

  static std::size_t parse_index(const std::string &text, const char *name) {
    try {
      return static_cast<std::size_t>(std::stoull(text));
    } catch (const std::exception &) {
      fail(ErrorKind::invalid_argument, std::string("bad ") + name, name);
    }
  }

  static std::size_t query_index(const httplib::Request &r, const char *name) {
    if (!r.has_param(name))
      fail(ErrorKind::invalid_argument, std::string("missing query parameter ") + name, name);
    return parse_index(r.get_param_value(name), name);
  }

  static int status_of(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::invalid_argument:
    case ErrorKind::shape_mismatch:
    case ErrorKind::non_finite: return 400;
    case ErrorKind::not_found: return 404;
    case ErrorKind::conflict: return 409;
    default: return 500;
    }
  }

  static void write_error(httplib::Response &res, const std::exception &e) {
    int status = 500;
    std::string kind = "internal", field;
    if (const auto *err = dynamic_cast<const Error *>(&e)) {
      status = status_of(err->kind());
      kind = to_string(err->kind());
      field = err->field();
    } else if (dynamic_cast<const Unavailable *>(&e)) {
      status = 503;
      kind = "unavailable";
    } else if (dynamic_cast<const json::exception *>(&e)) {
      status = 400;
      kind = "invalid_json";
      field = "body";
    }
    res.status = status;
    res.set_content(
        json{{"error", {{"code", status}, {"kind", kind}, {"message", e.what()}, {"field", field}}}}.dump(),
        "application/json");
  }

  template <class F> httplib::Server::Handler wrap(F &&f) {
    return [f = std::forward<F>(f)](const httplib::Request &req, httplib::Response &res) {
      try {
        res.set_content(f(req).dump(), "application/json");
      } catch (const std::exception &e) {
        write_error(res, e);
      }
    };
  }

  template <class F> httplib::Server::Handler wrap_body(F &&f) {
    return wrap([f = std::forward<F>(f)](const httplib::Request &req) {
      return f(json::parse(req.body));
    });
  }

  std::optional<ModelFile> model_;
  ParameterSpace space_;
  std::optional<Dataset> dataset_;
  ServiceOptions options_;
  std::string hash_;

  std::atomic<long long> current_instance_{-1};
  mutable std::shared_mutex cache_mutex_;
  mutable std::map<std::size_t, InstanceView> instances_;
  mutable std::map<std::string, json> cache_;
  mutable std::mutex saved_mutex_;
  std::vector<SavedEntry> saved_;
};

} // namespace cellsteer
