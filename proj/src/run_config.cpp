#include "ppmn/run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace ppmn {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": not a non-negative integer: '" + v + "'");
  }
  return out;
}

Extent2 parse_extent(const std::string& key, const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos) throw ConfigError(key + ": expected HxW, got '" + text + "'");
  return {parse_u64(key, text.substr(0, x)), parse_u64(key, text.substr(x + 1))};
}

}  // namespace

const std::vector<std::pair<std::string, std::string>>& RunConfig::defaults() {
  static const std::vector<std::pair<std::string, std::string>> table = {
      {"data", ""},
      {"out", "runs/default"},
      {"seed", "1"},
      {"threads", "0"},
      {"train_ids", "10"},
      {"test_ids", "10"},
      {"input_size", "160x80"},
      {"input_mean", "0.5"},
      {"backbone_stages", "4"},
      {"backbone_base_channels", "16"},
      {"rep_channels", "64"},
      {"pyramid_rates", "1,2,3"},
      {"pyramid_kernel", "3"},
      {"branch_out_channels", "64"},
      {"fusion_out_channels", "64"},
      {"pool_window", "2x2"},
      {"pool_stride", "2x2"},
      {"fc_hidden", "1024"},
      {"head_init_gain", "0.1"},
      {"batch_size", "100"},
      {"max_iters", "500"},
      {"base_lr", "0.01"},
      {"lr_power", "0.5"},
      {"momentum", "0.9"},
      {"weight_decay", "0.0002"},
      {"negative_ratio", "3"},
      {"augment", "true"},
      {"log_every", "10"},
      {"checkpoint_every", "0"},
      {"hnm.enabled", "false"},
      {"hnm.retain_fraction", "0.25"},
      {"hnm.max_iters", "0"},
      {"hnm.base_lr", "0"},
      {"hnm.max_candidates", "1000000"},
      {"checkpoint", ""},
      {"eval_seed", "1"},
      {"trials", "1"},
      {"synth.ids", "20"},
      {"synth.per_camera", "4"},
      {"synth.size", "160x80"},
      {"gradcheck.tolerance", "0.001"},
      {"gradcheck.max_coords", "64"},
      {"gradcheck.eps_scale", "0.01"},
      {"gradcheck.batch", "2"},
  };
  return table;
}

RunConfig::RunConfig() {
  for (const auto& [k, v] : defaults()) values_.emplace(k, v);
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
}

RunConfig RunConfig::parse(std::string_view text, const std::string& origin) {
  RunConfig config;
  std::istringstream in{std::string(text)};
  std::string line;
  for (std::size_t number = 1; std::getline(in, line); ++number) {
    const std::string body = trim(line.substr(0, line.find('#')));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    try {
      config.set(key, trim(std::string_view(body).substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return config;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str(), path.string());
}

void RunConfig::apply_overrides(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& arg = args[i];
    if (arg.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + arg + "'");
    const auto eq = arg.find('=');
    if (eq != std::string::npos) {
      set(arg.substr(2, eq - 2), arg.substr(eq + 1));
    } else {
      if (i + 1 >= args.size()) throw ConfigError("override " + arg + " has no value");
      set(arg.substr(2), args[++i]);
    }
  }
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::real(const std::string& key) const {
  const std::string& v = get(key);
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": not a number: '" + v + "'");
  return out;
}

std::uint64_t RunConfig::u64(const std::string& key) const { return parse_u64(key, get(key)); }

std::size_t RunConfig::count(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }

bool RunConfig::flag(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

Extent2 RunConfig::extent(const std::string& key) const { return parse_extent(key, get(key)); }

ModelConfig RunConfig::model() const {
  ModelConfig m;
  m.input_size = extent("input_size");
  m.input_mean = real("input_mean");
  m.backbone_stages = count("backbone_stages");
  m.backbone_base_channels = count("backbone_base_channels");
  m.rep_channels = count("rep_channels");
  m.pyramid_rates.clear();
  std::istringstream rates(get("pyramid_rates"));
  for (std::string item; std::getline(rates, item, ',');) {
    m.pyramid_rates.push_back(parse_u64("pyramid_rates", trim(item)));
  }
  m.pyramid_kernel = count("pyramid_kernel");
  m.branch_out_channels = count("branch_out_channels");
  m.fusion_out_channels = count("fusion_out_channels");
  m.pool.window = extent("pool_window");
  m.pool.stride = extent("pool_stride");
  m.fc_hidden = count("fc_hidden");
  m.head_init_gain = real("head_init_gain");
  m.seed = u64("seed");
  try {
    m.validate();
  } catch (const ShapeError& e) {
    throw ConfigError(e.what());
  }
  return m;
}

TrainConfig RunConfig::train() const {
  TrainConfig t;
  t.batch_size = count("batch_size");
  t.max_iters = count("max_iters");
  t.base_lr = real("base_lr");
  t.lr_power = real("lr_power");
  t.momentum = real("momentum");
  t.weight_decay = real("weight_decay");
  t.negative_ratio = real("negative_ratio");
  t.augment = flag("augment");
  t.log_every = count("log_every");
  t.checkpoint_every = count("checkpoint_every");
  t.hnm.enabled = flag("hnm.enabled");
  t.hnm.retain_fraction = real("hnm.retain_fraction");
  t.hnm.max_iters = count("hnm.max_iters");
  t.hnm.base_lr = real("hnm.base_lr");
  t.hnm.max_candidates = count("hnm.max_candidates");
  t.seed = u64("seed");
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return t;
}

std::string RunConfig::resolved() const {
  std::string out;
  for (const auto& [k, unused] : defaults()) out += k + " = " + values_.at(k) + "\n";
  return out;
}

void RunConfig::write_resolved(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << resolved();
}

}  // namespace ppmn
