// SPDX-License-Identifier: Apache-2.0
#include "config.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace urkle::cli {

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  train.seed = s;
  probe.seed = s;
  eval.seed = s;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("'" + key + "': cannot parse '" + v + "' as a number");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("'" + key + "': expected true or false, got '" + v + "'");
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

template <typename T>
Setter num(T RunConfig::*field) {
  return [field](RunConfig& c, const std::string& k, const std::string& v) { c.*field = parse_number<T>(k, v); };
}

template <typename T, typename S>
Setter num(S RunConfig::*outer, T S::*field) {
  return [outer, field](RunConfig& c, const std::string& k, const std::string& v) {
    (c.*outer).*field = parse_number<T>(k, v);
  };
}

Setter text(std::string RunConfig::*field) {
  return [field](RunConfig& c, const std::string&, const std::string& v) { c.*field = v; };
}

// Anything that needs more than a plain field assignment.
template <typename F>
Setter custom(F f) {
  return [f](RunConfig& c, const std::string& k, const std::string& v) { f(c, k, v); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"method", custom([](RunConfig& c, auto&, auto& v) { c.train.method = parse_method(v); })},
      {"seed", custom([](RunConfig& c, auto& k, auto& v) { c.set_seed(parse_number<std::uint64_t>(k, v)); })},
      {"out", text(&RunConfig::out)},

      {"dataset", text(&RunConfig::dataset)},
      {"train_images", text(&RunConfig::train_images)},
      {"train_labels", text(&RunConfig::train_labels)},
      {"test_images", text(&RunConfig::test_images)},
      {"test_labels", text(&RunConfig::test_labels)},
      {"train_limit", num(&RunConfig::train_limit)},
      {"test_limit", num(&RunConfig::test_limit)},
      {"blobs_train", num(&RunConfig::blobs_train)},
      {"blobs_test", num(&RunConfig::blobs_test)},
      {"blobs_classes", num(&RunConfig::blobs_classes)},
      {"blobs_dim", num(&RunConfig::blobs_dim)},
      {"blobs_separation", num(&RunConfig::blobs_separation)},
      {"data_seed", num(&RunConfig::data_seed)},

      {"epochs", num(&RunConfig::train, &TrainConfig::epochs)},
      {"batch_size", num(&RunConfig::train, &TrainConfig::batch_size)},
      {"lr0", num(&RunConfig::train, &TrainConfig::lr0)},
      {"momentum", num(&RunConfig::train, &TrainConfig::momentum)},
      {"weight_decay", num(&RunConfig::train, &TrainConfig::weight_decay)},
      {"grad_clip", num(&RunConfig::train, &TrainConfig::grad_clip)},
      {"beta_warmup_epochs", num(&RunConfig::train, &TrainConfig::beta_warmup_epochs)},
      {"monitor_size", num(&RunConfig::train, &TrainConfig::monitor_size)},

      {"epsilon", custom([](RunConfig& c, auto& k, auto& v) { c.train.attack.epsilon = parse_number<double>(k, v); })},
      {"alpha", custom([](RunConfig& c, auto& k, auto& v) { c.train.attack.alpha = parse_number<double>(k, v); })},
      {"steps", custom([](RunConfig& c, auto& k, auto& v) { c.train.attack.steps = parse_number<std::size_t>(k, v); })},
      {"random_init", custom([](RunConfig& c, auto& k, auto& v) { c.train.attack.random_init = parse_bool(k, v); })},
      {"init_radius",
       custom([](RunConfig& c, auto& k, auto& v) { c.train.attack.init_radius = parse_number<double>(k, v); })},
      {"eot_samples",
       custom([](RunConfig& c, auto& k, auto& v) { c.train.attack.eot_samples = parse_number<std::size_t>(k, v); })},

      {"beta_vae", custom([](RunConfig& c, auto& k, auto& v) { c.train.objective.beta_vae = parse_number<double>(k, v); })},
      {"beta_robust",
       custom([](RunConfig& c, auto& k, auto& v) { c.train.objective.beta_robust = parse_number<double>(k, v); })},
      {"tau", custom([](RunConfig& c, auto& k, auto& v) { c.train.objective.tau = parse_number<double>(k, v); })},
      {"m_bound", custom([](RunConfig& c, auto& k, auto& v) { c.train.objective.m_bound = parse_number<double>(k, v); })},

      {"backbone", custom([](RunConfig& c, auto&, auto& v) { c.train.model.encoder.backbone = v; })},
      {"d_z", custom([](RunConfig& c, auto& k, auto& v) { c.train.model.encoder.d_z = parse_number<std::size_t>(k, v); })},
      {"likelihood", custom([](RunConfig& c, auto&, auto& v) { c.train.model.heads.likelihood = parse_likelihood(v); })},
      {"classifier_width", custom([](RunConfig& c, auto& k, auto& v) {
         c.train.model.heads.classifier_width = parse_number<std::size_t>(k, v);
       })},
      {"projector_width", custom([](RunConfig& c, auto& k, auto& v) {
         c.train.model.heads.projector_width = parse_number<std::size_t>(k, v);
       })},

      {"aug_crop", custom([](RunConfig& c, auto& k, auto& v) { c.train.augmentation.crop = parse_bool(k, v); })},
      {"crop_padding", custom([](RunConfig& c, auto& k, auto& v) {
         c.train.augmentation.crop_padding = parse_number<std::size_t>(k, v);
       })},
      {"aug_flip", custom([](RunConfig& c, auto& k, auto& v) { c.train.augmentation.flip = parse_bool(k, v); })},
      {"flip_probability", custom([](RunConfig& c, auto& k, auto& v) {
         c.train.augmentation.flip_probability = parse_number<double>(k, v);
       })},
      {"aug_jitter", custom([](RunConfig& c, auto& k, auto& v) { c.train.augmentation.jitter = parse_bool(k, v); })},
      {"jitter_strength", custom([](RunConfig& c, auto& k, auto& v) {
         c.train.augmentation.jitter_strength = parse_number<double>(k, v);
       })},
      {"aug_noise", custom([](RunConfig& c, auto& k, auto& v) { c.train.augmentation.noise = parse_bool(k, v); })},
      {"noise_std",
       custom([](RunConfig& c, auto& k, auto& v) { c.train.augmentation.noise_std = parse_number<double>(k, v); })},

      {"probe_epochs", num(&RunConfig::probe, &ProbeConfig::epochs)},
      {"probe_batch_size", num(&RunConfig::probe, &ProbeConfig::batch_size)},
      {"probe_lr0", num(&RunConfig::probe, &ProbeConfig::lr0)},
      {"probe_width", num(&RunConfig::probe, &ProbeConfig::width)},
      {"labels_per_run", num(&RunConfig::labels_per_run)},

      {"eval_epsilon", custom([](RunConfig& c, auto& k, auto& v) { c.eval_epsilons.push_back(parse_number<double>(k, v)); })},
      {"eval_alpha", custom([](RunConfig& c, auto& k, auto& v) { c.eval.attack.alpha = parse_number<double>(k, v); })},
      {"eval_steps",
       custom([](RunConfig& c, auto& k, auto& v) { c.eval.attack.steps = parse_number<std::size_t>(k, v); })},
      {"eval_eot_samples",
       custom([](RunConfig& c, auto& k, auto& v) { c.eval.attack.eot_samples = parse_number<std::size_t>(k, v); })},
      {"audit_alpha",
       custom([](RunConfig& c, auto& k, auto& v) { c.eval.audit_attack.alpha = parse_number<double>(k, v); })},
      {"audit_steps",
       custom([](RunConfig& c, auto& k, auto& v) { c.eval.audit_attack.steps = parse_number<std::size_t>(k, v); })},
      {"mc_samples", num(&RunConfig::eval, &EvalConfig::mc_samples)},
      {"eval_batch_size", num(&RunConfig::eval, &EvalConfig::batch_size)},
  };
  return table;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key = value, got '" + line + "'", line_no);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("unknown key '" + key + "'", line_no);
    if (value.empty()) throw ConfigError("'" + key + "' has no value", line_no);
    if (key != "eval_epsilon" && !seen.insert(key).second) throw ConfigError("'" + key + "' given twice", line_no);
    try {
      it->second(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(e.what(), line_no);
    }
  }
  if (cfg.dataset != "mnist" && cfg.dataset != "blobs") {
    throw ConfigError("dataset must be mnist or blobs, got '" + cfg.dataset + "'");
  }
  if (cfg.eval_epsilons.empty()) cfg.eval_epsilons.push_back(cfg.train.attack.epsilon);
  cfg.train.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

void check_paths(const RunConfig& cfg) {
  if (cfg.dataset != "mnist") return;
  for (const auto* p : {&cfg.train_images, &cfg.train_labels, &cfg.test_images, &cfg.test_labels}) {
    if (p->empty()) throw ConfigError("mnist dataset needs train_images, train_labels, test_images and test_labels");
    std::ifstream f(*p, std::ios::binary);
    if (!f) throw IoError("cannot read '" + *p + "'");
  }
}

namespace {

Dataset head(const Dataset& d, std::size_t limit) {
  if (limit == 0 || limit >= d.size()) return d;
  std::vector<std::size_t> rows(limit);
  for (std::size_t i = 0; i < limit; ++i) rows[i] = i;
  return d.subset(rows);
}

}  // namespace

Splits load_splits(RunConfig& cfg) {
  check_paths(cfg);
  Splits s;
  if (cfg.dataset == "mnist") {
    s.train = load_idx(cfg.train_images, cfg.train_labels);
    s.test = load_idx(cfg.test_images, cfg.test_labels);
    s.train.split = "train";
    s.test.split = "test";
  } else {
    // One draw split in two keeps both splits on the same class means.
    const Dataset all = synth_blobs(cfg.blobs_train + cfg.blobs_test, cfg.blobs_classes, cfg.blobs_dim,
                                    cfg.blobs_separation, cfg.data_seed);
    std::vector<std::size_t> tr(cfg.blobs_train), te(cfg.blobs_test);
    for (std::size_t i = 0; i < tr.size(); ++i) tr[i] = i;
    for (std::size_t i = 0; i < te.size(); ++i) te[i] = cfg.blobs_train + i;
    s.train = all.subset(tr);
    s.test = all.subset(te);
    s.train.split = "train";
    s.test.split = "test";
  }
  s.train = head(s.train, cfg.train_limit);
  s.test = head(s.test, cfg.test_limit);
  if (s.train.num_classes > 0) {
    s.test.num_classes = std::max(s.test.num_classes, s.train.num_classes);
    cfg.train.objective.num_classes = s.test.num_classes;
  }

  auto& enc = cfg.train.model.encoder;
  enc.input_shape = s.train.sample_shape();
  for (AttackConfig* a : {&cfg.train.attack, &cfg.train.monitor_attack, &cfg.eval.attack, &cfg.eval.audit_attack}) {
    a->input_min = s.train.value_min;
    a->input_max = s.train.value_max;
  }
  cfg.train.monitor_attack.epsilon = cfg.train.attack.epsilon;
  return s;
}

}  // namespace urkle::cli
