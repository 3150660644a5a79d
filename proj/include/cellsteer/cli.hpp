#pragma once

// Headless driver: gen-data, train, eval, predict, optimize, export, serve,
// replay. Every command prints one summary line and writes a run manifest
// (JSON) that is sufficient to replay it.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cellsteer/analysis.hpp"
#include "cellsteer/json_io.hpp"
#include "cellsteer/model_io.hpp"
#include "cellsteer/nn.hpp"
#include "cellsteer/service.hpp"
#include "cellsteer/sim_oracle.hpp"

namespace cellsteer::cli {

enum ExitCode : int {
  ok = 0,
  internal_error = 1,
  usage_error = 2,
  io_error = 3,
  shape_error = 4,
  non_finite_error = 5,
  corrupt_error = 6,
  argument_error = 7,
  replay_mismatch = 8,
  not_found_error = 9,
};

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
  case ErrorKind::io: return io_error;
  case ErrorKind::shape_mismatch: return shape_error;
  case ErrorKind::non_finite: return non_finite_error;
  case ErrorKind::corrupt_file: return corrupt_error;
  case ErrorKind::invalid_argument: return argument_error;
  case ErrorKind::not_found:
  case ErrorKind::conflict: return not_found_error;
  }
  return internal_error;
}

/// Training defaults bundled with an architecture.
struct TrainingPreset {
  Architecture architecture;
  TrainConfig config;

  static TrainingPreset named(std::string_view name) {
    TrainingPreset p{Architecture::preset(name), {}};
    p.config.epochs = name == "paper" ? 5000 : 150;
    return p;
  }
};

struct RunManifest {
  std::string command;
  std::uint64_t seed = 0;
  std::string config_file;
  std::map<std::string, std::string> parameters;
  std::vector<std::string> outputs;
  std::map<std::string, std::string> output_hashes;
  std::string summary;
  double wall_time_s = 0.0;

  json to_json() const {
    return {{"command", command},         {"seed", seed},
            {"config_file", config_file}, {"parameters", parameters},
            {"outputs", outputs},         {"output_hashes", output_hashes},
            {"summary", summary},         {"wall_time_s", wall_time_s}};
  }

  static RunManifest from_json(const json &j) {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.seed = j.value("seed", std::uint64_t{0});
    m.config_file = j.value("config_file", std::string{});
    m.parameters = j.at("parameters").get<std::map<std::string, std::string>>();
    m.outputs = j.value("outputs", std::vector<std::string>{});
    m.output_hashes = j.value("output_hashes", std::map<std::string, std::string>{});
    m.summary = j.value("summary", std::string{});
    m.wall_time_s = j.value("wall_time_s", 0.0);
    return m;
  }

  /// Argument vector that re-runs the command with the resolved parameters.
  std::vector<std::string> replay_args() const {
    std::vector<std::string> args{command};
    for (const auto &[k, v] : parameters) {
      if (k == "manifest" || v.empty())
        continue;
      args.push_back("--" + k);
      args.push_back(v);
    }
    return args;
  }
};

inline std::string file_hash(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    fail(ErrorKind::io, "cannot hash " + path.string(), "output");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(bytes)));
  return buf;
}

inline std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

/// "start:end" in degrees, start > end wraps through 0.
inline RegionMask parse_degree_range(const std::string &text, const char *field) {
  const auto colon = text.find(':');
  if (colon == std::string::npos)
    fail(ErrorKind::invalid_argument, std::string(field) + " must look like start:end", field);
  const auto a = csv::parse_numbers(text.substr(0, colon), field, ErrorKind::invalid_argument);
  const auto b = csv::parse_numbers(text.substr(colon + 1), field, ErrorKind::invalid_argument);
  if (a.size() != 1 || b.size() != 1)
    fail(ErrorKind::invalid_argument, std::string(field) + " must look like start:end", field);
  return RegionMask::degree_range(a[0], b[0]);
}

inline ParameterConfig parse_config_row(const std::string &text, const char *field) {
  const auto values = csv::parse_numbers(text, field, ErrorKind::invalid_argument);
  for (double v : values)
    if (!std::isfinite(v))
      fail(ErrorKind::non_finite, std::string(field) + " has a non-finite value", field);
  return to_config(values, field);
}

namespace detail {

struct Context {
  std::ostream &out;
  std::ostream &err;
  RunManifest manifest;
  std::string manifest_path;
};

inline ParameterSpace space_from(const std::string &path) {
  return path.empty() ? ParameterSpace::default_space() : load_parameter_space(path);
}

/// Appends `--key value` for config-file keys not given on the command line.
inline std::vector<std::string> merge_config_file(std::vector<std::string> args,
                                                  std::string &config_file) {
  for (std::size_t i = 0; i + 1 < args.size(); ++i)
    if (args[i] == "--config") {
      config_file = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i),
                 args.begin() + static_cast<std::ptrdiff_t>(i + 2));
      break;
    }
  if (config_file.empty())
    return args;
  if (!std::filesystem::exists(config_file))
    fail(ErrorKind::io, "config file " + config_file + " not found", "config");
  CLI::ConfigINI reader;
  for (const auto &item : reader.from_file(config_file)) {
    if (item.name.empty() || item.name == "++" || item.name == "--")
      continue;
    const std::string flag = "--" + item.name;
    if (std::find(args.begin(), args.end(), flag) != args.end())
      continue;
    args.push_back(flag);
    std::string value;
    for (std::size_t k = 0; k < item.inputs.size(); ++k)
      value += (k ? "," : "") + item.inputs[k];
    args.push_back(value);
  }
  return args;
}

} // namespace detail

/// Runs one CLI command. `args` excludes the program name.
inline int run(std::vector<std::string> args, std::ostream &out = std::cout,
               std::ostream &err = std::cerr) {
  const auto started = std::chrono::steady_clock::now();
  detail::Context ctx{out, err, {}, {}};
  try {
    args = detail::merge_config_file(std::move(args), ctx.manifest.config_file);
  } catch (const Error &e) {
    err << "error [" << to_string(e.kind()) << "]: " << e.what() << "\n";
    return exit_code_for(e.kind());
  }

  CLI::App app{"cellsteer: neural surrogate steering for cell-polarization simulations"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  // Shared option storage; each subcommand binds what it needs.
  std::string data, val_data, out_path, model_path, space_path, preset = "desk", config_row,
      max_range, min_range, anchor, list_path, manifest_path, export_path, host = "127.0.0.1",
      saved_list, static_dir, replay_path;
  long long n = 3000, epochs = 0, batch = 0, steps = 500, port = 8080, default_t = 50;
  std::uint64_t seed = 0;
  double beta = 4.0, lr = 1e-3, val_fraction = 0.0, lambda = 0.1, step_size = 0.01, pf_a = 0.01;

  auto add_common = [&](CLI::App *sub) {
    sub->option_defaults()->always_capture_default();
    sub->add_option("--manifest", manifest_path, "Where to write the run manifest");
    sub->add_option("--space", space_path, "Parameter space file (name,raw_lo,raw_hi per line)")
        ->envname("CELLSTEER_SPACE");
  };

  auto *gen = app.add_subcommand("gen-data", "Sample configs and run the synthetic simulation");
  add_common(gen);
  gen->add_option("--n", n, "Number of samples");
  gen->add_option("--seed", seed, "Sampling seed");
  gen->add_option("--out", out_path, "Configs CSV (profiles go to <stem>.profiles.csv)")->required();
  gen->add_option("--pf-a", pf_a, "Polarization factor constant a");

  auto *trn = app.add_subcommand("train", "Train a surrogate");
  add_common(trn);
  trn->add_option("--data", data, "Training dataset (configs CSV)")->required();
  trn->add_option("--val-data", val_data, "Separate validation dataset");
  trn->add_option("--preset", preset, "Architecture and defaults: paper or desk");
  trn->add_option("--epochs", epochs, "Epochs (0 = preset default)");
  trn->add_option("--batch", batch, "Batch size (0 = preset default)");
  trn->add_option("--beta", beta, "PF weighting: sample weight 1 + beta * PF");
  trn->add_option("--lr", lr, "Adam learning rate");
  trn->add_option("--seed", seed, "Initialization, shuffling and dropout seed");
  trn->add_option("--val-fraction", val_fraction, "Held-out fraction when --val-data is absent");
  trn->add_option("--pf-a", pf_a, "Polarization factor constant a");
  trn->add_option("--out", out_path, "Model file")->required();

  auto *evl = app.add_subcommand("eval", "RMSE accuracy of a model on a dataset");
  add_common(evl);
  evl->add_option("--model", model_path)->required();
  evl->add_option("--data", data)->required();

  auto *prd = app.add_subcommand("predict", "Predict a profile for one config");
  add_common(prd);
  prd->add_option("--model", model_path)->required();
  prd->add_option("--config-row", config_row, "35 comma-separated normalized values")->required();
  prd->add_option("--pf-a", pf_a);
  prd->add_option("--out", out_path, "Write the 400 predicted values as one CSV line");

  auto *opt = app.add_subcommand("optimize", "Activation maximization/minimization over brushed regions");
  add_common(opt);
  opt->add_option("--model", model_path)->required();
  opt->add_option("--max-range", max_range, "Degrees start:end to maximize");
  opt->add_option("--min-range", min_range, "Degrees start:end to minimize");
  opt->add_option("--anchor", anchor, "35 comma-separated normalized values (default all zero)");
  opt->add_option("--lambda", lambda);
  opt->add_option("--steps", steps);
  opt->add_option("--step-size", step_size);
  opt->add_option("--pf-a", pf_a);
  opt->add_option("--out", out_path, "Result JSON");
  opt->add_option("--export", export_path, "Simulation-ready CSV of the optimum");

  auto *exp = app.add_subcommand("export", "Convert a saved parameter list to simulation-ready CSV");
  add_common(exp);
  exp->add_option("--list", list_path, "Saved list JSON")->required();
  exp->add_option("--out", out_path)->required();

  auto *srv = app.add_subcommand("serve", "Run the HTTP service");
  add_common(srv);
  // Flags win over the environment.
  srv->add_option("--model", model_path)->required()->envname("CELLSTEER_MODEL");
  srv->add_option("--port", port)->envname("CELLSTEER_PORT");
  srv->add_option("--host", host);
  srv->add_option("--data", data, "Dataset whose rows become instances")->envname("CELLSTEER_DATA");
  srv->add_option("--saved-list", saved_list, "Saved list file, loaded at start and written on shutdown");
  srv->add_option("--static-dir", static_dir, "UI assets to serve at /");
  srv->add_option("--default-T", default_t, "MC-dropout samples when a request omits T");

  auto *rpl = app.add_subcommand("replay", "Re-run a manifest and verify its outputs");
  rpl->add_option("manifest_file", replay_path)->required();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp &e) {
    out << app.help();
    return ok;
  } catch (const CLI::ParseError &e) {
    err << "usage error: " << e.what() << "\n";
    return usage_error;
  }

  auto &m = ctx.manifest;
  auto outputs_add = [&](const std::string &p) {
    if (!p.empty())
      m.outputs.push_back(p);
  };

  try {
    std::string summary;
    CLI::App *sub = app.get_subcommands().front();
    m.command = sub->get_name();
    m.seed = seed;

    if (sub == rpl) {
      std::ifstream in(replay_path);
      if (!in)
        fail(ErrorKind::io, "cannot open manifest " + replay_path, "manifest");
      const auto recorded = RunManifest::from_json(json::parse(in));
      if (recorded.command == "serve" || recorded.command == "replay")
        fail(ErrorKind::invalid_argument, recorded.command + " runs cannot be replayed", "manifest");
      auto replay_args = recorded.replay_args();
      const auto tmp_manifest = replay_path + ".replay.json";
      replay_args.push_back("--manifest");
      replay_args.push_back(tmp_manifest);
      std::ostringstream sink_out, sink_err;
      const int code = run(replay_args, sink_out, sink_err);
      if (code != ok) {
        err << sink_err.str();
        return code;
      }
      std::ifstream rin(tmp_manifest);
      const auto again = RunManifest::from_json(json::parse(rin));
      rin.close();
      std::filesystem::remove(tmp_manifest);
      bool same = again.summary == recorded.summary;
      for (const auto &[path, hash] : recorded.output_hashes)
        same = same && again.output_hashes.count(path) && again.output_hashes.at(path) == hash;
      if (!same) {
        err << "replay mismatch for " << replay_path << "\n";
        return replay_mismatch;
      }
      out << "replay ok: " << recorded.command << " reproduced " << recorded.outputs.size()
          << " output(s)\n";
      return ok;
    }

    PFParams pf;
    pf.a = pf_a;
    const ParameterSpace space = detail::space_from(space_path);

    if (sub == gen) {
      const auto d = generate_dataset(n, seed, pf);
      save_dataset(d, space, out_path);
      outputs_add(out_path);
      outputs_add(profile_path_for(out_path).string());
      auto sorted = d.pf;
      std::sort(sorted.begin(), sorted.end());
      summary = "generated " + std::to_string(d.size()) + " samples (seed " + std::to_string(seed) +
                ") -> " + out_path + "; PF median " + fmt(quantile(sorted, 0.5)) + ", p95 " +
                fmt(quantile(sorted, 0.95)) + ", max " + fmt(sorted.back());
    } else if (sub == trn) {
      auto p = TrainingPreset::named(preset);
      TrainConfig cfg = p.config;
      if (epochs > 0)
        cfg.epochs = static_cast<std::size_t>(epochs);
      if (batch > 0)
        cfg.batch_size = static_cast<std::size_t>(batch);
      cfg.pf_weight_beta = beta;
      cfg.learning_rate = lr;
      cfg.rng_seed = seed;
      cfg.validation_fraction = val_fraction;
      const auto train_set = load_dataset(data, space, pf);
      std::optional<Dataset> validation;
      if (!val_data.empty())
        validation = load_dataset(val_data, space, pf);
      auto result = train(SurrogateModel::initialized(p.architecture, seed), train_set, cfg,
                          validation ? &*validation : nullptr);
      const double acc = result.history.validation_accuracy.back();
      ModelMetadata meta{{"preset", preset},
                         {"epochs", std::to_string(cfg.epochs)},
                         {"batch_size", std::to_string(cfg.batch_size)},
                         {"beta", csv::format_number(beta)},
                         {"learning_rate", csv::format_number(lr)},
                         {"seed", std::to_string(seed)},
                         {"samples", std::to_string(train_set.size())},
                         {"final_loss", csv::format_number(result.history.train_loss.back())}};
      if (std::isfinite(acc))
        meta["validation_accuracy"] = csv::format_number(acc);
      save_model(result.model, out_path, meta);
      std::string history = "epoch,train_loss,validation_accuracy\n";
      for (std::size_t e = 0; e < result.history.train_loss.size(); ++e)
        history += std::to_string(e) + "," + csv::format_number(result.history.train_loss[e]) + "," +
                   csv::format_number(result.history.validation_accuracy[e]) + "\n";
      const auto history_path = out_path + ".history.csv";
      csv::write_text(history_path, history);
      outputs_add(out_path);
      outputs_add(history_path);
      summary = "trained " + preset + " model for " + std::to_string(cfg.epochs) + " epochs on " +
                std::to_string(train_set.size()) + " samples -> " + out_path + "; final loss " +
                fmt(result.history.train_loss.back()) +
                (std::isfinite(acc) ? ", validation accuracy " + fmt(acc, 1) + "%" : "");
    } else if (sub == evl) {
      const auto model = load_model(model_path);
      const auto d = load_dataset(data, space);
      summary = "accuracy " + fmt(rmse_accuracy(model, d), 1) + "% on " + std::to_string(d.size()) +
                " samples";
    } else if (sub == prd) {
      const auto model = load_model(model_path);
      const auto config = parse_config_row(config_row, "config-row");
      const auto profile = predict(model, config);
      const auto peak = std::max_element(profile.begin(), profile.end()) - profile.begin();
      double predicted_pf = 0.0;
      ConcentrationProfile clipped = profile;
      for (auto &v : clipped)
        v = std::max(0.0, v);
      predicted_pf = polarization_factor(clipped, pf);
      if (!out_path.empty()) {
        std::string line;
        for (std::size_t i = 0; i < kNumCells; ++i)
          line += (i ? "," : "") + csv::format_number(profile[i]);
        csv::write_text(out_path, line + "\n");
        outputs_add(out_path);
      }
      summary = "peak " + fmt(profile[static_cast<std::size_t>(peak)], 3) + " at " +
                fmt(kCellDegrees * static_cast<double>(peak), 1) + " deg, predicted PF " +
                fmt(predicted_pf) + (in_unit_box(config) ? "" : " (config outside [-1,1])");
    } else if (sub == opt) {
      const auto model = load_model(model_path);
      OptimizationRequest req;
      req.max_mask = max_range.empty() ? RegionMask::none() : parse_degree_range(max_range, "max-range");
      req.min_mask = min_range.empty() ? RegionMask::none() : parse_degree_range(min_range, "min-range");
      req.anchor = anchor.empty() ? std::vector<double>(kNumParams, 0.0)
                                  : as_vector(parse_config_row(anchor, "anchor"));
      req.lambda = lambda;
      if (steps < 1)
        fail(ErrorKind::invalid_argument, "steps must be >= 1", "steps");
      req.steps = static_cast<std::size_t>(steps);
      req.step_size = step_size;
      const auto res = activation_optimize(model, req);
      const auto x = to_config(res.optimum);
      const double oracle_pf = polarization_factor(simulate(x), pf);
      if (!out_path.empty()) {
        const json doc = {{"optimum", res.optimum},   {"trajectory", res.trajectory},
                          {"profile", res.profile},   {"objective", res.best_objective},
                          {"origin", to_string(origin_of(req))}, {"oracle_pf", oracle_pf}};
        csv::write_text(out_path, doc.dump() + "\n");
        outputs_add(out_path);
      }
      if (!export_path.empty()) {
        export_configs(std::vector<ParameterConfig>{x}, space, export_path);
        outputs_add(export_path);
      }
      summary = std::string("optimized (") + to_string(origin_of(req)) + ", " +
                std::to_string(req.steps) + " steps): objective " + fmt(res.best_objective) +
                ", oracle PF " + fmt(oracle_pf);
    } else if (sub == exp) {
      const auto entries = load_saved_list(list_path);
      std::vector<ParameterConfig> configs;
      for (const auto &e : entries)
        configs.push_back(e.config);
      export_configs(configs, space, out_path);
      outputs_add(out_path);
      summary = "exported " + std::to_string(configs.size()) + " configuration(s) -> " + out_path;
    } else if (sub == srv) {
      ServiceOptions so;
      so.host = host;
      so.port = static_cast<int>(port);
      so.default_samples = default_t;
      so.saved_list_path = saved_list;
      so.static_dir = static_dir;
      std::optional<Dataset> d;
      if (!data.empty())
        d = load_dataset(data, space);
      Service service(load_model_file(model_path), space, std::move(d), so);
      httplib::Server server;
      out << "serving model " << service.hash() << " on http://" << host << ":" << port << "\n"
          << std::flush;
      if (!service.run(server))
        fail(ErrorKind::io, "cannot listen on " + host + ":" + std::to_string(port), "port");
      summary = "served model " + service.hash();
    }

    // Resolved parameters for replay.
    for (const auto *o : sub->get_options()) {
      const std::string name = o->get_single_name();
      if (name.empty() || name == "help")
        continue;
      const auto &res = o->results();
      m.parameters[name] = res.empty() ? o->get_default_str() : res.back();
    }
    for (const auto &p : m.outputs)
      m.output_hashes[p] = file_hash(p);
    m.summary = summary;
    m.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    const std::string mpath = !manifest_path.empty()
                                  ? manifest_path
                                  : (m.outputs.empty() ? "cellsteer-" + m.command : m.outputs.front()) +
                                        ".manifest.json";
    csv::write_text(mpath, m.to_json().dump(2) + "\n");
    out << summary << "\n";
    return ok;
  } catch (const Error &e) {
    err << "error [" << to_string(e.kind()) << "]: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const json::exception &e) {
    err << "error [corrupt_file]: " << e.what() << "\n";
    return corrupt_error;
  } catch (const std::exception &e) {
    err << "error [internal]: " << e.what() << "\n";
    return internal_error;
  }
}

} // namespace cellsteer::cli
