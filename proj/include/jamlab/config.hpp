#pragma once

// Run configuration file for the command-line tool.
//
//   {
//     "link_budget": {"gnss_power_dbw": -157, "noise_density_dbw_hz": -205},
//     "model":       { ...ModelConfig fields... },
//     "training":    {"epochs": 30, "batch_size": 64, "base_lr": 5e-4,
//                     "weight_decay": 1e-5, "warmup_epochs": 3,
//                     "val_fraction": 0.1},
//     "seed": 0,
//     "jobs": 1,
//     "paths":       {"data": "...", "out": "..."}
//   }
//
// Every key is optional and unknown keys are rejected at every level.

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "jamlab/model.hpp"
#include "jamlab/nn/optim.hpp"
#include "jamlab/signal.hpp"

namespace jamlab {

struct TrainingConfig {
  int epochs = nn::kTotalEpochs;
  std::size_t batch_size = 64;
  double base_lr = nn::kBaseLr;
  double weight_decay = nn::kWeightDecay;
  int warmup_epochs = nn::kWarmupEpochs;
  double val_fraction = 0.1;

  bool operator==(const TrainingConfig&) const = default;
};

struct RunConfig {
  LinkBudget link_budget;  // jsr_db is per stratum and not configurable here
  bool link_budget_set = false;
  ModelConfig model;
  /// True when the file set model.n_classes explicitly; it must then agree
  /// with the dataset.
  bool n_classes_set = false;
  /// model.init_seed given explicitly; otherwise it follows `seed`.
  bool init_seed_set = false;
  TrainingConfig training;
  bool val_fraction_set = false;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  std::optional<std::string> data_path, out_path;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw InvalidArgument(where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* key : keys) ok = ok || k == key;
    if (!ok) throw InvalidArgument("unknown key '" + k + "' in " + where);
  }
}

}  // namespace detail

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json j = {
      {"link_budget",
       {{"gnss_power_dbw", c.link_budget.gnss_power_dbw}, {"noise_density_dbw_hz", c.link_budget.noise_density_dbw_hz}}},
      {"model", model_config_to_json(c.model)},
      {"training",
       {{"epochs", c.training.epochs},
        {"batch_size", c.training.batch_size},
        {"base_lr", c.training.base_lr},
        {"weight_decay", c.training.weight_decay},
        {"warmup_epochs", c.training.warmup_epochs},
        {"val_fraction", c.training.val_fraction}}},
      {"seed", c.seed},
      {"jobs", c.jobs},
      {"paths", nlohmann::json::object()}};
  if (c.data_path) j["paths"]["data"] = *c.data_path;
  if (c.out_path) j["paths"]["out"] = *c.out_path;
  return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j, {"link_budget", "model", "training", "seed", "jobs", "paths"}, "run config");
  RunConfig c;
  try {
    if (j.contains("link_budget")) {
      const auto& b = j["link_budget"];
      c.link_budget_set = true;
      detail::reject_unknown(b, {"gnss_power_dbw", "noise_density_dbw_hz"}, "link_budget");
      c.link_budget.gnss_power_dbw = b.value("gnss_power_dbw", c.link_budget.gnss_power_dbw);
      c.link_budget.noise_density_dbw_hz = b.value("noise_density_dbw_hz", c.link_budget.noise_density_dbw_hz);
    }
    if (j.contains("model")) {
      c.model = model_config_from_json(j["model"]);
      c.n_classes_set = j["model"].contains("n_classes");
      c.init_seed_set = j["model"].contains("init_seed");
    }
    if (j.contains("training")) {
      const auto& t = j["training"];
      detail::reject_unknown(t, {"epochs", "batch_size", "base_lr", "weight_decay", "warmup_epochs", "val_fraction"},
                             "training");
      c.training.epochs = t.value("epochs", c.training.epochs);
      c.training.batch_size = t.value("batch_size", c.training.batch_size);
      c.training.base_lr = t.value("base_lr", c.training.base_lr);
      c.training.weight_decay = t.value("weight_decay", c.training.weight_decay);
      c.training.warmup_epochs = t.value("warmup_epochs", c.training.warmup_epochs);
      c.training.val_fraction = t.value("val_fraction", c.training.val_fraction);
      c.val_fraction_set = t.contains("val_fraction");
    }
    c.seed = j.value("seed", c.seed);
    c.jobs = j.value("jobs", c.jobs);
    if (j.contains("paths")) {
      const auto& p = j["paths"];
      detail::reject_unknown(p, {"data", "out"}, "paths");
      if (p.contains("data")) c.data_path = p["data"].get<std::string>();
      if (p.contains("out")) c.out_path = p["out"].get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("run config: ") + e.what());
  }
  if (c.training.epochs < 0) throw InvalidArgument("training.epochs must be non-negative");
  if (c.training.batch_size == 0) throw InvalidArgument("training.batch_size must be positive");
  if (!(c.training.base_lr > 0.0)) throw InvalidArgument("training.base_lr must be positive");
  if (!(c.training.weight_decay >= 0.0)) throw InvalidArgument("training.weight_decay must be non-negative");
  if (c.training.warmup_epochs < 0) throw InvalidArgument("training.warmup_epochs must be non-negative");
  if (!(c.training.val_fraction >= 0.0 && c.training.val_fraction < 1.0))
    throw InvalidArgument("training.val_fraction must be in [0, 1)");
  if (c.jobs == 0) throw InvalidArgument("jobs must be positive");
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace jamlab
