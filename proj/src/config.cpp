#include "distalign/config.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace distalign {

namespace {

using nlohmann::json;

std::string mode_to_string(ModelMode mode) {
  return mode == ModelMode::Masked ? "masked" : "autoregressive";
}

ModelMode mode_from_string(const std::string& s) {
  if (s == "masked") return ModelMode::Masked;
  if (s == "autoregressive") return ModelMode::Autoregressive;
  throw std::runtime_error("unknown model.mode '" + s + "'");
}

}  // namespace

std::string RunConfig::to_json_text() const {
  json j;
  j["schema_version"] = 1;
  j["paths.professions"] = professions_path.string();
  j["paths.pairs"] = pairs_path.string();
  j["paths.templates"] = templates_path.string();
  j["paths.corpus_dir"] = corpus_dir.string();
  j["paths.checkpoint_dir"] = checkpoint_dir.string();
  j["paths.report_dir"] = report_dir.string();
  j["target"] = to_string(train.target);
  j["loss"] = to_string(train.loss);
  j["train.beta"] = train.beta;
  j["train.gamma"] = train.gamma;
  j["train.batch_size"] = train.batch_size;
  j["train.val_batch_size"] = train.val_batch_size;
  j["train.learning_rate"] = train.learning_rate;
  j["train.patience"] = train.patience;
  j["train.improvement_threshold_equal"] = train.improvement_threshold_equal;
  j["train.improvement_threshold_real_world"] = train.improvement_threshold_real_world;
  j["train.max_epochs"] = train.max_epochs;
  j["train.seeds"] = train.seeds;
  j["train.alpha_high"] = train.alpha_high;
  j["train.alpha_low"] = train.alpha_low;
  j["model.mode"] = mode_to_string(model_mode);
  j["model.dim"] = model_dim;
  j["model.max_len"] = model_max_len;
  j["model.init_scale"] = model_init_scale;
  j["model.seed"] = model_seed;
  j["skew.male_prob_male_dominated"] = skew_male_prob_male_dominated;
  j["skew.male_prob_female_dominated"] = skew_male_prob_female_dominated;
  j["skew.male_prob_balanced"] = skew_male_prob_balanced;
  j["skew.overrides"] = skew_overrides;
  j["skew.template_weights"] = skew_template_weights;
  j["skew.corpus_size"] = skew_corpus_size;
  j["skew.heldout_size"] = skew_heldout_size;
  j["skew.filler_ratio"] = skew_filler_ratio;
  j["skew.seed"] = skew_seed;
  j["pretrain.epochs"] = pretrain_epochs;
  j["pretrain.batch_size"] = pretrain_batch_size;
  j["pretrain.learning_rate"] = pretrain_learning_rate;
  j["pretrain.mask_prob"] = pretrain_mask_prob;
  j["pretrain.seed"] = pretrain_seed;
  j["split.seed"] = split_seed;
  j["split.ratios"] = split_ratios;
  j["ppl_cutoff"] = ppl_cutoff;
  j["sweep.batch_sizes"] = sweep_batch_sizes;
  j["sweep.betas"] = sweep_betas;
  j["sweep.gammas"] = sweep_gammas;
  return j.dump(2);
}

namespace {

void apply_key(RunConfig& config, const std::string& key, const json& value) {
  if (key == "schema_version") {
    return;
  } else if (key == "paths.professions") {
    config.professions_path = value.get<std::string>();
  } else if (key == "paths.pairs") {
    config.pairs_path = value.get<std::string>();
  } else if (key == "paths.templates") {
    config.templates_path = value.get<std::string>();
  } else if (key == "paths.corpus_dir") {
    config.corpus_dir = value.get<std::string>();
  } else if (key == "paths.checkpoint_dir") {
    config.checkpoint_dir = value.get<std::string>();
  } else if (key == "paths.report_dir") {
    config.report_dir = value.get<std::string>();
  } else if (key == "target") {
    const auto mode = target_mode_from_string(value.get<std::string>());
    if (!mode) throw std::runtime_error("target must be 'equal' or 'real_world'");
    config.train.target = *mode;
  } else if (key == "loss") {
    const auto kind = loss_kind_from_string(value.get<std::string>());
    if (!kind) throw std::runtime_error("loss must be 'uniform' or 'weighted_adaptive'");
    config.train.loss = *kind;
  } else if (key == "train.beta") {
    config.train.beta = value.get<double>();
  } else if (key == "train.gamma") {
    config.train.gamma = value.get<double>();
  } else if (key == "train.batch_size") {
    config.train.batch_size = value.get<int>();
  } else if (key == "train.val_batch_size") {
    config.train.val_batch_size = value.get<int>();
  } else if (key == "train.learning_rate") {
    config.train.learning_rate = value.get<double>();
  } else if (key == "train.patience") {
    config.train.patience = value.get<int>();
  } else if (key == "train.improvement_threshold_equal") {
    config.train.improvement_threshold_equal = value.get<double>();
  } else if (key == "train.improvement_threshold_real_world") {
    config.train.improvement_threshold_real_world = value.get<double>();
  } else if (key == "train.max_epochs") {
    config.train.max_epochs = value.get<int>();
  } else if (key == "train.seeds") {
    config.train.seeds = value.get<std::vector<std::uint64_t>>();
  } else if (key == "train.alpha_high") {
    config.train.alpha_high = value.get<double>();
  } else if (key == "train.alpha_low") {
    config.train.alpha_low = value.get<double>();
  } else if (key == "model.mode") {
    config.model_mode = mode_from_string(value.get<std::string>());
  } else if (key == "model.dim") {
    config.model_dim = value.get<int>();
  } else if (key == "model.max_len") {
    config.model_max_len = value.get<int>();
  } else if (key == "model.init_scale") {
    config.model_init_scale = value.get<double>();
  } else if (key == "model.seed") {
    config.model_seed = value.get<std::uint64_t>();
  } else if (key == "skew.male_prob_male_dominated") {
    config.skew_male_prob_male_dominated = value.get<double>();
  } else if (key == "skew.male_prob_female_dominated") {
    config.skew_male_prob_female_dominated = value.get<double>();
  } else if (key == "skew.male_prob_balanced") {
    config.skew_male_prob_balanced = value.get<double>();
  } else if (key == "skew.overrides") {
    config.skew_overrides = value.get<std::map<std::string, double>>();
  } else if (key == "skew.template_weights") {
    config.skew_template_weights = value.get<std::map<std::string, double>>();
  } else if (key == "skew.corpus_size") {
    config.skew_corpus_size = value.get<int>();
  } else if (key == "skew.heldout_size") {
    config.skew_heldout_size = value.get<int>();
  } else if (key == "skew.filler_ratio") {
    config.skew_filler_ratio = value.get<double>();
  } else if (key == "skew.seed") {
    config.skew_seed = value.get<std::uint64_t>();
  } else if (key == "pretrain.epochs") {
    config.pretrain_epochs = value.get<int>();
  } else if (key == "pretrain.batch_size") {
    config.pretrain_batch_size = value.get<int>();
  } else if (key == "pretrain.learning_rate") {
    config.pretrain_learning_rate = value.get<double>();
  } else if (key == "pretrain.mask_prob") {
    config.pretrain_mask_prob = value.get<double>();
  } else if (key == "pretrain.seed") {
    config.pretrain_seed = value.get<std::uint64_t>();
  } else if (key == "split.seed") {
    config.split_seed = value.get<std::uint64_t>();
  } else if (key == "split.ratios") {
    config.split_ratios = value.get<std::array<double, 3>>();
  } else if (key == "ppl_cutoff") {
    config.ppl_cutoff = value.get<double>();
  } else if (key == "sweep.batch_sizes") {
    config.sweep_batch_sizes = value.get<std::vector<int>>();
  } else if (key == "sweep.betas") {
    config.sweep_betas = value.get<std::vector<double>>();
  } else if (key == "sweep.gammas") {
    config.sweep_gammas = value.get<std::vector<double>>();
  } else {
    throw std::runtime_error("unknown config key '" + key + "'");
  }
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
  const json j = json::parse(text);
  RunConfig config;
  for (const auto& [key, value] : j.items()) apply_key(config, key, value);
  return config;
}

RunConfig RunConfig::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json_text(text);
}

void RunConfig::save_json(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config: " + path.string());
  out << to_json_text() << '\n';
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw std::runtime_error("--set expects key=value, got '" + assignment + "'");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;  // unquoted strings (paths, enum names)
  }
  apply_key(*this, key, value);
}

SkewConfig RunConfig::skew_config(const std::vector<Profession>& professions) const {
  SkewConfig skew;
  skew.corpus_size = skew_corpus_size;
  skew.heldout_size = skew_heldout_size;
  skew.filler_ratio = skew_filler_ratio;
  skew.seed = skew_seed;
  skew.template_weight = skew_template_weights;
  for (const auto& p : professions) {
    double prob = 0.5;
    switch (p.category) {
      case Category::MaleDominated: prob = skew_male_prob_male_dominated; break;
      case Category::FemaleDominated: prob = skew_male_prob_female_dominated; break;
      case Category::Balanced: prob = skew_male_prob_balanced; break;
    }
    const auto it = skew_overrides.find(p.name);
    if (it != skew_overrides.end()) prob = it->second;
    skew.male_probability[p.name] = prob;
  }
  return skew;
}

}  // namespace distalign
