#include "ocogan/config.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <sstream>

#include "ocogan/errors.hpp"

namespace ocogan {

namespace {

template <class Enum, std::size_t N>
Enum parse_enum(std::string_view s, const std::array<std::pair<Enum, std::string_view>, N>& table,
                std::string_view what) {
  for (const auto& [value, name] : table) {
    if (name == s) return value;
  }
  std::string allowed;
  for (const auto& [value, name] : table) {
    if (!allowed.empty()) allowed += ", ";
    allowed += name;
  }
  throw ConfigError("invalid " + std::string(what) + " '" + std::string(s) + "' (expected one of: " +
                    allowed + ")");
}

template <class Enum, std::size_t N>
std::string_view enum_name(Enum e, const std::array<std::pair<Enum, std::string_view>, N>& table) {
  for (const auto& [value, name] : table) {
    if (value == e) return name;
  }
  return "?";
}

constexpr std::array<std::pair<Regime, std::string_view>, 3> kRegimes{{
    {Regime::kLimited, "limited"},
    {Regime::kPartial, "partial"},
    {Regime::kFull, "full"},
}};

constexpr std::array<std::pair<TrainMode, std::string_view>, 5> kModes{{
    {TrainMode::kJoint, "joint"},
    {TrainMode::kCondOnly, "cond_only"},
    {TrainMode::kUncondOnly, "uncond_only"},
    {TrainMode::kStageUncondThenCond, "stage_uncond_then_cond"},
    {TrainMode::kStageCondThenUncond, "stage_cond_then_uncond"},
}};

constexpr std::array<std::pair<UpsampleMode, std::string_view>, 2> kUpsample{{
    {UpsampleMode::kNearest, "nearest"},
    {UpsampleMode::kTransposed, "transposed"},
}};

constexpr std::array<std::pair<ExtractorKind, std::string_view>, 2> kExtractors{{
    {ExtractorKind::kRandomConv, "random_conv"},
    {ExtractorKind::kPixels, "pixels"},
}};

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

// Field codecs. Each parse throws ConfigError with a short reason; the caller adds location.

void parse_value(std::string_view s, int64_t& out) {
  int64_t v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("expected an integer, got '" + std::string(s) + "'");
  }
  out = v;
}

void parse_value(std::string_view s, uint64_t& out) {
  uint64_t v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("expected a non-negative integer, got '" + std::string(s) + "'");
  }
  out = v;
}

void parse_value(std::string_view s, double& out) {
  double v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("expected a number, got '" + std::string(s) + "'");
  }
  out = v;
}

void parse_value(std::string_view s, std::optional<int64_t>& out) {
  if (s == "auto") {
    out.reset();
    return;
  }
  int64_t v{};
  parse_value(s, v);
  out = v;
}

void parse_value(std::string_view s, std::vector<int64_t>& out) {
  std::vector<int64_t> values;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto piece = trim(s.substr(start, comma == std::string_view::npos ? s.npos : comma - start));
    int64_t v{};
    parse_value(piece, v);
    values.push_back(v);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  out = std::move(values);
}

void parse_value(std::string_view s, Regime& out) { out = parse_regime(s); }
void parse_value(std::string_view s, TrainMode& out) { out = parse_train_mode(s); }
void parse_value(std::string_view s, UpsampleMode& out) { out = parse_upsample_mode(s); }
void parse_value(std::string_view s, ExtractorKind& out) { out = parse_extractor_kind(s); }

std::string format_value(int64_t v) { return std::to_string(v); }
std::string format_value(uint64_t v) { return std::to_string(v); }

std::string format_value(double v) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

std::string format_value(const std::optional<int64_t>& v) {
  return v ? std::to_string(*v) : std::string("auto");
}

std::string format_value(const std::vector<int64_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::string format_value(Regime v) { return std::string(to_string(v)); }
std::string format_value(TrainMode v) { return std::string(to_string(v)); }
std::string format_value(UpsampleMode v) { return std::string(to_string(v)); }
std::string format_value(ExtractorKind v) { return std::string(to_string(v)); }

// Single table of every addressable field. Order here is the serialization order.
template <class Cfg, class Visitor>
void visit_fields(Cfg& c, Visitor&& f) {
  f("data", "resolution", c.data.resolution);
  f("data", "num_classes", c.data.num_classes);
  f("data", "min_shapes", c.data.min_shapes);
  f("data", "max_shapes", c.data.max_shapes);
  f("data", "noise_std", c.data.noise_std);
  f("data", "color_jitter", c.data.color_jitter);
  f("data", "train_count", c.data.train_count);
  f("data", "val_count", c.data.val_count);
  f("data", "seed", c.data.seed);

  f("model", "gen_widths", c.model.gen_widths);
  f("model", "style_channels", c.model.style_channels);
  f("model", "latent_dim", c.model.latent_dim);
  f("model", "noise_dim", c.model.noise_dim);
  f("model", "mapping_hidden", c.model.mapping_hidden);
  f("model", "mapping_layers", c.model.mapping_layers);
  f("model", "cond_hidden", c.model.cond_hidden);
  f("model", "upsample", c.model.upsample);
  f("model", "disc_widths", c.model.disc_widths);
  f("model", "aspp_rates", c.model.aspp_rates);
  f("model", "aspp_channels", c.model.aspp_channels);
  f("model", "lrelu_slope", c.model.lrelu_slope);
  f("model", "norm_eps", c.model.norm_eps);
  f("model", "sn_iterations", c.model.sn_iterations);

  f("train", "total_steps", c.train.total_steps);
  f("train", "bs_uncond", c.train.bs_uncond);
  f("train", "bs_cond", c.train.bs_cond);
  f("train", "lr", c.train.lr);
  f("train", "adam_b1", c.train.adam_b1);
  f("train", "adam_b2", c.train.adam_b2);
  f("train", "adam_eps", c.train.adam_eps);
  f("train", "r1_gamma", c.train.r1_gamma);
  f("train", "r1_interval", c.train.r1_interval);
  f("train", "ema_decay", c.train.ema_decay);
  f("train", "uncond_loss_weight", c.train.uncond_loss_weight);
  f("train", "lambda_labelmix", c.train.lambda_labelmix);
  f("train", "gumbel_tau", c.train.gumbel_tau);
  f("train", "mode", c.train.mode);
  f("train", "seed", c.train.seed);
  f("train", "regime", c.train.regime);
  f("train", "labeled_count", c.train.labeled_count);
  f("train", "flip_prob", c.train.flip_prob);
  f("train", "checkpoint_interval", c.train.checkpoint_interval);
  f("train", "eval_interval", c.train.eval_interval);
  f("train", "sample_grid", c.train.sample_grid);

  f("eval", "sets", c.eval.sets);
  f("eval", "samples_per_set", c.eval.samples_per_set);
  f("eval", "seed", c.eval.seed);
  f("eval", "extractor_seed", c.eval.extractor_seed);
  f("eval", "extractor", c.eval.extractor);
}

// Returns false when no field matches (section, key).
bool assign_field(RunConfig& cfg, std::string_view section, std::string_view key,
                  std::string_view value) {
  bool found = false;
  visit_fields(cfg, [&](std::string_view s, std::string_view k, auto& field) {
    if (!found && s == section && k == key) {
      parse_value(value, field);
      found = true;
    }
  });
  return found;
}

bool known_section(std::string_view s) {
  return s == "data" || s == "model" || s == "train" || s == "eval";
}

}  // namespace

std::string_view to_string(Regime r) { return enum_name(r, kRegimes); }
std::string_view to_string(TrainMode m) { return enum_name(m, kModes); }
std::string_view to_string(UpsampleMode m) { return enum_name(m, kUpsample); }
std::string_view to_string(ExtractorKind k) { return enum_name(k, kExtractors); }
Regime parse_regime(std::string_view s) { return parse_enum(s, kRegimes, "regime"); }
TrainMode parse_train_mode(std::string_view s) { return parse_enum(s, kModes, "mode"); }
UpsampleMode parse_upsample_mode(std::string_view s) {
  return parse_enum(s, kUpsample, "upsample mode");
}
ExtractorKind parse_extractor_kind(std::string_view s) {
  return parse_enum(s, kExtractors, "extractor");
}

void ShapesConfig::validate() const {
  if (resolution != 32 && resolution != 64) {
    throw ConfigError("data.resolution must be 32 or 64, got " + std::to_string(resolution));
  }
  if (num_classes < 2 || num_classes > 8) {
    throw ConfigError("data.num_classes must be in [2, 8], got " + std::to_string(num_classes));
  }
  if (min_shapes < 0 || max_shapes < min_shapes) {
    throw ConfigError("data.min_shapes/max_shapes must satisfy 0 <= min <= max");
  }
  if (noise_std < 0.0 || color_jitter < 0.0) {
    throw ConfigError("data.noise_std and data.color_jitter must be non-negative");
  }
  if (train_count < 0 || val_count < 0) {
    throw ConfigError("data.train_count and data.val_count must be non-negative");
  }
}

void ModelConfig::validate() const {
  if (gen_widths.empty()) throw ConfigError("model.gen_widths must not be empty");
  for (auto w : gen_widths) {
    if (w <= 0) throw ConfigError("model.gen_widths entries must be positive");
  }
  if (resolution % (int64_t{1} << (levels() - 1)) != 0 || base_resolution() < 1) {
    throw ConfigError("resolution " + std::to_string(resolution) + " is not divisible by 2^(levels-1)");
  }
  if (disc_widths.empty()) throw ConfigError("model.disc_widths must not be empty");
  for (auto w : disc_widths) {
    if (w <= 0) throw ConfigError("model.disc_widths entries must be positive");
  }
  if (bottleneck_resolution() < 1 ||
      (bottleneck_resolution() << static_cast<int64_t>(disc_widths.size())) != resolution) {
    throw ConfigError("resolution " + std::to_string(resolution) +
                      " cannot be halved once per discriminator stage");
  }
  if (aspp_rates.empty()) throw ConfigError("model.aspp_rates must not be empty");
  for (auto r : aspp_rates) {
    if (r < 1) throw ConfigError("model.aspp_rates entries must be >= 1");
    if (r > bottleneck_resolution()) {
      throw ConfigError("ASPP rate " + std::to_string(r) + " exceeds the " +
                        std::to_string(bottleneck_resolution()) + "x" +
                        std::to_string(bottleneck_resolution()) + " bottleneck");
    }
  }
  if (style_channels < 2 || latent_dim < 1 || noise_dim < 1 || mapping_hidden < 1 ||
      mapping_layers < 1 || cond_hidden < 1 || aspp_channels < 1) {
    throw ConfigError("model widths must be positive (style_channels >= 2)");
  }
  if (num_classes < 2) throw ConfigError("model needs at least 2 classes");
  if (norm_eps <= 0.0) throw ConfigError("model.norm_eps must be positive");
  if (sn_iterations < 1) throw ConfigError("model.sn_iterations must be >= 1");
  if (lrelu_slope < 0.0) throw ConfigError("model.lrelu_slope must be non-negative");
}

int64_t TrainConfig::effective_bs_cond() const {
  if (bs_cond) return *bs_cond;
  return regime == Regime::kPartial ? 4 : 16;
}

void TrainConfig::validate() const {
  if (total_steps < 0) throw ConfigError("train.total_steps must be non-negative");
  if (lr <= 0.0 || r1_gamma < 0.0 || r1_interval < 1 || ema_decay < 0.0 || ema_decay > 1.0 ||
      uncond_loss_weight <= 0.0 || lambda_labelmix < 0.0 || gumbel_tau <= 0.0) {
    throw ConfigError("train rates must be positive (r1_interval >= 1, ema_decay in [0,1])");
  }
  if (adam_b1 < 0.0 || adam_b1 >= 1.0 || adam_b2 < 0.0 || adam_b2 >= 1.0 || adam_eps <= 0.0) {
    throw ConfigError("train.adam_b1/adam_b2 must lie in [0,1) and adam_eps must be positive");
  }
  const int64_t bsc = effective_bs_cond();
  if (bs_uncond < 0 || bsc < 0) throw ConfigError("batch sizes must be non-negative");
  if (bsc == 0 && mode != TrainMode::kUncondOnly) {
    throw ConfigError("train.bs_cond = 0 is only permitted in uncond_only mode");
  }
  if (bs_uncond == 0 && mode != TrainMode::kCondOnly) {
    throw ConfigError("train.bs_uncond = 0 is only permitted in cond_only mode");
  }
  if (labeled_count < 0) throw ConfigError("train.labeled_count must be non-negative");
  if (flip_prob < 0.0 || flip_prob > 1.0) throw ConfigError("train.flip_prob must lie in [0,1]");
  if (checkpoint_interval < 1 || eval_interval < 1) {
    throw ConfigError("train.checkpoint_interval and train.eval_interval must be >= 1");
  }
  if (sample_grid < 1) throw ConfigError("train.sample_grid must be >= 1");
}

void EvalConfig::validate() const {
  if (sets < 1) throw ConfigError("eval.sets must be >= 1");
  if (samples_per_set < 0) throw ConfigError("eval.samples_per_set must be non-negative");
}

void RunConfig::finalize() {
  data.validate();
  model.resolution = data.resolution;
  model.num_classes = data.num_classes;
  model.validate();
  train.validate();
  eval.validate();
}

RunConfig parse_run_config(std::string_view text) {
  RunConfig cfg;
  std::string section;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find_first_of("#;");
    std::string line = trim(std::string_view(raw).substr(0, hash));
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header '" + line + "'");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (!known_section(section)) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + line + "'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (section.empty()) throw ConfigError(where + "key '" + key + "' appears before any section");
    try {
      if (!assign_field(cfg, section, key, value)) {
        throw ConfigError("unknown key '" + key + "' in section [" + section + "]");
      }
    } catch (const ConfigError& e) {
      if (std::string_view(e.what()).starts_with("unknown key")) throw ConfigError(where + e.what());
      throw ConfigError(where + section + "." + key + ": " + e.what());
    }
  }
  cfg.finalize();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

std::string serialize_run_config(const RunConfig& cfg) {
  std::ostringstream out;
  std::string current;
  visit_fields(cfg, [&](std::string_view section, std::string_view key, const auto& field) {
    if (section != current) {
      if (!current.empty()) out << "\n";
      out << "[" << section << "]\n";
      current = std::string(section);
    }
    out << key << " = " << format_value(field) << "\n";
  });
  return out.str();
}

void apply_override(RunConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string_view::npos || dot == std::string_view::npos || dot > eq) {
    throw ConfigError("override must look like section.key=value, got '" + std::string(assignment) + "'");
  }
  const std::string section = trim(assignment.substr(0, dot));
  const std::string key = trim(assignment.substr(dot + 1, eq - dot - 1));
  const std::string value = trim(assignment.substr(eq + 1));
  if (!known_section(section)) throw ConfigError("unknown section [" + section + "] in override");
  if (!assign_field(cfg, section, key, value)) {
    throw ConfigError("unknown key '" + key + "' in section [" + section + "]");
  }
}

}  // namespace ocogan
