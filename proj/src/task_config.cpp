#include "mmdm/task_config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mmdm::pipeline {

namespace {

int to_int(const std::string& key, const std::string& v) {
  try {
    size_t pos;
    const int x = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected integer, got '" + v + "'");
  }
}

uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos;
    const uint64_t x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected unsigned integer, got '" + v + "'");
  }
}

double to_dbl(const std::string& key, const std::string& v) {
  try {
    size_t pos;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected boolean, got '" + v + "'");
}

std::vector<std::string> split_csv(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : v) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace

void TaskConfig::set(const std::string& key, const std::string& value) {
  explicit_keys.insert(key);
  try {
    if (key == "task") task = value;
    else if (key == "seed") seed = to_u64(key, value);
    else if (key == "out_dir") out_dir = value;
    else if (key == "label") label = value;
    else if (key == "net.depth") net.depth = to_int(key, value);
    else if (key == "net.dec_depth") net.dec_depth = to_int(key, value);
    else if (key == "net.feat_dim") net.feat_dim = to_int(key, value);
    else if (key == "net.heads") net.heads = to_int(key, value);
    else if (key == "net.head_dim") net.head_dim = to_int(key, value);
    else if (key == "net.ffn_dim") net.ffn_dim = to_int(key, value);
    else if (key == "net.in_dim") net.in_dim = to_int(key, value);
    else if (key == "net.out_dim") net.out_dim = to_int(key, value);
    else if (key == "net.order") net.order = net::order_from_string(value);
    else if (key == "net.pos_embed_per_block") net.pos_embed_per_block = to_bool(key, value);
    else if (key == "diffusion.steps") diffusion_steps = to_int(key, value);
    else if (key == "diffusion.schedule") schedule = diffusion::schedule_kind_from_string(value);
    else if (key == "diffusion.target_tail") target_tail = to_dbl(key, value);
    else if (key == "diffusion.objective") objective = value;
    else if (key == "diffusion.ddim_stride") ddim_stride = to_int(key, value);
    else if (key == "masking.pretrain.pattern") pretrain.pattern = masking::pattern_from_string(value);
    else if (key == "masking.pretrain.ratio") pretrain.ratio = to_dbl(key, value);
    else if (key == "masking.finetune.pattern") finetune.pattern = masking::pattern_from_string(value);
    else if (key == "masking.finetune.ratio") finetune.ratio = to_dbl(key, value);
    else if (key == "masking.omega") omega = to_dbl(key, value);
    else if (key == "masking.force_invisible") force_invisible = to_bool(key, value);
    else if (key == "masking.ratio") mask_ratio = to_dbl(key, value);
    else if (key == "train.mode") train_mode = value;
    else if (key == "train.pretrain_steps") pretrain_steps = to_int(key, value);
    else if (key == "train.finetune_steps") finetune_steps = to_int(key, value);
    else if (key == "train.batch") batch = to_int(key, value);
    else if (key == "train.lr") lr = to_dbl(key, value);
    else if (key == "train.weight_decay") weight_decay = to_dbl(key, value);
    else if (key == "train.checkpoint_every") checkpoint_every = to_int(key, value);
    else if (key == "train.augment") augment = to_bool(key, value);
    else if (key == "data.kind") data_kind = value;
    else if (key == "data.sequences") data_sequences = to_int(key, value);
    else if (key == "data.frames") data_frames = to_int(key, value);
    else if (key == "data.joints") data_joints = to_int(key, value);
    else if (key == "window.length") window_length = to_int(key, value);
    else if (key == "split.preceding") split.preceding = to_int(key, value);
    else if (key == "split.transition") split.transition = to_int(key, value);
    else if (key == "split.succeeding") split.succeeding = to_int(key, value);
    else if (key == "imputation.emphasis") emphasis_enabled = to_bool(key, value);
    else if (key == "imputation.emphasis_factor") emphasis_factor = to_dbl(key, value);
    else if (key == "imputation.emphasis_dims") {
      emphasis_dims.clear();
      for (const auto& tok : split_csv(value)) emphasis_dims.push_back(to_int(key, tok));
    } else if (key == "imputation.guidance_scale") guidance_scale = to_dbl(key, value);
    else if (key == "sim.cameras") sim_cameras = to_int(key, value);
    else if (key == "sim.noise_px") sim_noise_px = to_dbl(key, value);
    else if (key == "sim.occl_prob") sim_occl_prob = to_dbl(key, value);
    else if (key == "sim.people") sim_people = to_int(key, value);
    else if (key == "sim.sigma_max") sim_sigma_max = to_dbl(key, value);
    else if (key == "sim.conf_scale") sim_conf_scale = to_dbl(key, value);
    else if (key == "sim.shuffle") sim_shuffle = to_bool(key, value);
    else if (key == "eval.metrics") eval_metrics = split_csv(value);
    else throw ConfigError("unknown config key: " + key);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

void TaskConfig::finalize() {
  static const std::set<std::string> kTasks = {"train",     "complete", "refine",
                                               "inbetween", "simulate", "eval"};
  if (task.empty()) throw ConfigError("config must set 'task'");
  if (!kTasks.count(task)) throw ConfigError("unknown task: " + task);

  // per-task defaults for keys the file left unset
  if (!explicit_keys.count("diffusion.steps")) {
    diffusion_steps = (task == "refine" || train_mode == "refinement") ? 50 : 1000;
  }
  if (task == "inbetween" || train_mode == "inbetween") {
    if (!explicit_keys.count("net.in_dim")) net.in_dim = 12;
    if (!explicit_keys.count("net.out_dim")) net.out_dim = 12;
    if (!explicit_keys.count("data.joints")) data_joints = 22;
  }

  if (objective != "signal" && objective != "noise")
    throw ConfigError("diffusion.objective must be 'signal' or 'noise'");
  if (train_mode != "completion" && train_mode != "refinement" && train_mode != "inbetween")
    throw ConfigError("train.mode must be completion, refinement or inbetween");
  if (diffusion_steps < 1) throw ConfigError("diffusion.steps must be >= 1");
  if (ddim_stride < 0) throw ConfigError("diffusion.ddim_stride must be >= 0");
  if (batch < 1) throw ConfigError("train.batch must be >= 1");
  if (pretrain_steps < 0 || finetune_steps < 0)
    throw ConfigError("training step counts must be >= 0");
  if (data_sequences < 1) throw ConfigError("data.sequences must be >= 1");
  if (data_frames < 2) throw ConfigError("data.frames must be >= 2");
  if (window_length < 2) throw ConfigError("window.length must be >= 2");
  if (emphasis_factor <= 0.0) throw ConfigError("imputation.emphasis_factor must be positive");
  if (guidance_scale < 0.0) throw ConfigError("imputation.guidance_scale must be >= 0");
  for (int d : emphasis_dims)
    if (d < 0 || d >= 12) throw ConfigError("imputation.emphasis_dims entries must be in [0, 12)");
  try {
    net.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("net.*: ") + e.what());
  }

  // canonical hash over the effective configuration
  std::ostringstream os;
  os << task << '|' << seed << '|' << label << '|' << net.depth << ',' << net.dec_depth << ','
     << net.feat_dim << ',' << net.heads << ',' << net.head_dim << ',' << net.ffn_dim << ','
     << net.in_dim << ',' << net.out_dim << ',' << net::to_string(net.order) << ','
     << net.pos_embed_per_block << '|' << diffusion_steps << ','
     << diffusion::to_string(schedule) << ',' << target_tail << ',' << objective << ','
     << ddim_stride << '|' << masking::to_string(pretrain.pattern) << ',' << pretrain.ratio << ','
     << masking::to_string(finetune.pattern) << ',' << finetune.ratio << ',' << omega << ','
     << force_invisible << ',' << mask_ratio << '|' << train_mode << ',' << pretrain_steps << ','
     << finetune_steps << ',' << batch << ',' << lr << ',' << weight_decay << ','
     << checkpoint_every << ',' << augment << '|' << data_kind << ',' << data_sequences << ',' << data_frames << ','
     << data_joints << '|' << window_length << '|' << split.preceding << ',' << split.transition
     << ',' << split.succeeding << '|' << emphasis_enabled << ',' << emphasis_factor << ','
     << guidance_scale << '|' << sim_cameras << ',' << sim_noise_px << ',' << sim_occl_prob << ','
     << sim_people << ',' << sim_sigma_max << ',' << sim_conf_scale << ',' << sim_shuffle;
  for (int d : emphasis_dims) os << ',' << d;
  for (const auto& m : eval_metrics) os << ',' << m;
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(os.str())));
  config_hash = buf;
}

TaskConfig parse_config_text(const std::string& text) {
  TaskConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key or value");
    cfg.set(key, value);
  }
  cfg.finalize();
  return cfg;
}

TaskConfig parse_config_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open config: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace mmdm::pipeline
