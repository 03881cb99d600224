#include "ocogan/trainer.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "ocogan/errors.hpp"
#include "ocogan/image_io.hpp"
#include "ocogan/losses.hpp"

namespace ocogan {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

double norm_of_grads(const std::vector<torch::Tensor>& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (p.grad().defined()) sq += p.grad().to(torch::kFloat64).pow(2).sum().item<double>();
  }
  return std::sqrt(sq);
}

void set_requires_grad(torch::nn::Module& m, bool on) {
  for (auto& p : m.parameters()) p.requires_grad_(on);
}

void append(std::vector<torch::Tensor>& out, const std::vector<torch::Tensor>& more) {
  out.insert(out.end(), more.begin(), more.end());
}

// Every parameter and buffer, parameters first, in registration order.
std::vector<std::pair<std::string, torch::Tensor>> named_state(const torch::nn::Module& m) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : m.named_parameters()) out.emplace_back(item.key(), item.value());
  for (const auto& item : m.named_buffers()) out.emplace_back(item.key(), item.value());
  return out;
}

void store_module(CheckpointFile& file, const torch::nn::Module& m, const std::string& prefix) {
  for (const auto& [name, t] : named_state(m)) file.add(prefix + name, t);
}

void load_module(const CheckpointFile& file, torch::nn::Module& m, const std::string& prefix) {
  torch::NoGradGuard no_grad;
  for (auto& [name, t] : named_state(m)) {
    const auto key = prefix + name;
    const auto* s = file.find(key);
    if (!s) throw ShapeMismatchError(key, "checkpoint has no tensor for parameter '" + key + "'");
    if (s->tensor.sizes() != t.sizes()) {
      throw ShapeMismatchError(key, "parameter '" + key + "' has shape " + c10::str(s->tensor.sizes()) +
                                        " in the checkpoint but the configuration expects " +
                                        c10::str(t.sizes()));
    }
    if (s->tensor.scalar_type() != t.scalar_type()) {
      throw ShapeMismatchError(key, "parameter '" + key + "' has a different dtype in the checkpoint");
    }
    t.copy_(s->tensor);
  }
}

void store_adam(CheckpointFile& file, torch::optim::Adam& opt, const torch::nn::Module& m,
                const std::string& prefix) {
  auto& state = opt.state();
  for (const auto& item : m.named_parameters()) {
    auto it = state.find(item.value().unsafeGetTensorImpl());
    if (it == state.end()) continue;
    const auto& st = static_cast<const torch::optim::AdamParamState&>(*it->second);
    const auto base = prefix + item.key() + "/";
    file.add(base + "step", torch::tensor({st.step()}, torch::kInt64));
    file.add(base + "exp_avg", st.exp_avg());
    file.add(base + "exp_avg_sq", st.exp_avg_sq());
  }
}

void load_adam(const CheckpointFile& file, torch::optim::Adam& opt, const torch::nn::Module& m,
               const std::string& prefix) {
  std::set<void*> in_optimizer;
  for (const auto& group : opt.param_groups()) {
    for (const auto& p : group.params()) in_optimizer.insert(p.unsafeGetTensorImpl());
  }
  auto& state = opt.state();
  state.clear();
  for (const auto& item : m.named_parameters()) {
    void* key = item.value().unsafeGetTensorImpl();
    const auto base = prefix + item.key() + "/";
    if (!in_optimizer.count(key) || !file.find(base + "step")) continue;
    const auto& avg = file.tensor(base + "exp_avg");
    const auto& avg_sq = file.tensor(base + "exp_avg_sq");
    if (avg.sizes() != item.value().sizes() || avg_sq.sizes() != item.value().sizes()) {
      throw ShapeMismatchError(base + "exp_avg", "optimizer moments for '" + item.key() +
                                                     "' do not match the parameter shape");
    }
    auto st = std::make_unique<torch::optim::AdamParamState>();
    st->step(file.tensor(base + "step").item<int64_t>());
    st->exp_avg(avg.clone());
    st->exp_avg_sq(avg_sq.clone());
    state[key] = std::move(st);
  }
}

std::vector<int64_t> union_sorted(std::vector<int64_t> a, const std::vector<int64_t>& b) {
  a.insert(a.end(), b.begin(), b.end());
  std::sort(a.begin(), a.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  return a;
}

bool mode_uses_cond(TrainMode m) { return m != TrainMode::kUncondOnly; }
bool mode_uses_uncond(TrainMode m) { return m != TrainMode::kCondOnly; }
bool stagewise(TrainMode m) {
  return m == TrainMode::kStageUncondThenCond || m == TrainMode::kStageCondThenUncond;
}

// Flock-based guard: released by the kernel if the process dies.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    fd_ = ::open(path_.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0) throw IoError("cannot create lock file '" + path_.string() + "'");
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      throw IoError("run directory '" + dir.string() + "' is in use by another process");
    }
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

}  // namespace

std::string StepMetrics::to_log_line() const {
  std::ostringstream out;
  out << "step=" << step << " stage=" << stage << " cond_batch=" << cond_batch
      << " uncond_batch=" << uncond_batch << " d_uncond=" << fmt(d_uncond)
      << " d_uncond_weighted=" << fmt(d_uncond_weighted) << " d_cond=" << fmt(d_cond)
      << " labelmix=" << fmt(labelmix) << " r1=" << fmt(r1) << " r1_applied=" << (r1_applied ? 1 : 0)
      << " d_total=" << fmt(d_total) << " g_uncond=" << fmt(g_uncond)
      << " g_uncond_weighted=" << fmt(g_uncond_weighted) << " g_cond=" << fmt(g_cond)
      << " g_total=" << fmt(g_total) << " grad_norm_d=" << fmt(grad_norm_d)
      << " grad_norm_g=" << fmt(grad_norm_g) << " seconds=" << fmt(seconds);
  return out.str();
}

bool StepMetrics::same_losses(const StepMetrics& o) const {
  return step == o.step && stage == o.stage && cond_batch == o.cond_batch &&
         uncond_batch == o.uncond_batch && d_uncond == o.d_uncond &&
         d_uncond_weighted == o.d_uncond_weighted && d_cond == o.d_cond && labelmix == o.labelmix &&
         r1 == o.r1 && r1_applied == o.r1_applied && d_total == o.d_total && g_uncond == o.g_uncond &&
         g_uncond_weighted == o.g_uncond_weighted && g_cond == o.g_cond && g_total == o.g_total &&
         grad_norm_d == o.grad_norm_d && grad_norm_g == o.grad_norm_g;
}

void ema_update(torch::nn::Module& live, torch::nn::Module& ema, double decay) {
  torch::NoGradGuard no_grad;
  auto live_params = live.named_parameters();
  for (auto& item : ema.named_parameters()) {
    const auto* src = live_params.find(item.key());
    if (!src) throw InternalError("EMA: live module has no parameter '" + item.key() + "'");
    if (src->sizes() != item.value().sizes()) {
      throw ShapeMismatchError(item.key(), "EMA: shape mismatch for '" + item.key() + "'");
    }
    item.value().mul_(decay).add_(*src, 1.0 - decay);
  }
  auto live_buffers = live.named_buffers();
  for (auto& item : ema.named_buffers()) {
    if (const auto* src = live_buffers.find(item.key())) item.value().copy_(*src);
  }
}

uint64_t parameter_hash(const torch::nn::Module& module) {
  uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const uint8_t*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, t] : named_state(module)) {
    mix(name.data(), name.size());
    auto c = t.detach().contiguous();
    mix(c.data_ptr(), c.nbytes());
  }
  return h;
}

std::string checkpoint_name(int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "step_%06lld.bin", static_cast<long long>(step));
  return buf;
}

Trainer::Trainer(RunConfig cfg, const Dataset& data) : cfg_(std::move(cfg)) {
  cfg_.finalize();
  if (data.resolution != cfg_.model.resolution || data.num_classes != cfg_.model.num_classes) {
    throw ConfigError("dataset is " + std::to_string(data.resolution) + "px with " +
                      std::to_string(data.num_classes) + " classes but the configuration expects " +
                      std::to_string(cfg_.model.resolution) + "px with " +
                      std::to_string(cfg_.model.num_classes));
  }
  if (data.train.empty()) throw DataError("training set is empty");
  const auto& tc = cfg_.train;
  split_ = make_split(data.train, tc.regime, tc.labeled_count, tc.seed);
  labeled_idx_ = split_.labeled_indices;
  uncond_idx_ = union_sorted(split_.labeled_indices, split_.unlabeled_indices);
  check_pools();

  images_ = stack_images(data.train);
  seg_ = one_hot_encode(stack_labels(data.train), cfg_.model.num_classes);

  torch::manual_seed(tc.seed);
  gen_ = HybridGenerator(cfg_.model, tc.gumbel_tau);
  disc_ = Discriminator(cfg_.model);
  ema_ = HybridGenerator(cfg_.model, tc.gumbel_tau);
  {
    torch::NoGradGuard no_grad;
    auto src = gen_->named_parameters();
    for (auto& item : ema_->named_parameters()) item.value().copy_(src[item.key()]);
  }
  set_requires_grad(*ema_, false);
  gen_->train();
  disc_->train();
  ema_->eval();

  opt_d_ = std::make_unique<torch::optim::Adam>(
      disc_->parameters(),
      torch::optim::AdamOptions(tc.lr).betas({tc.adam_b1, tc.adam_b2}).eps(tc.adam_eps));
  rng_ = at::make_generator<at::CPUGeneratorImpl>(tc.seed);
  configure_stage();
}

void Trainer::check_pools() const {
  const auto mode = cfg_.train.mode;
  if (mode_uses_cond(mode) && labeled_idx_.empty()) {
    throw ConfigError("mode " + std::string(to_string(mode)) +
                      " trains the conditional branch but the split has 0 labeled samples");
  }
  if (mode_uses_uncond(mode) && uncond_idx_.empty()) {
    throw ConfigError("mode " + std::string(to_string(mode)) + " needs unconditional samples but has none");
  }
}

std::unique_ptr<Trainer> Trainer::from_checkpoint(const CheckpointFile& file, const Dataset& data) {
  auto cfg = parse_run_config(file.bytes("meta/config"));
  auto trainer = std::make_unique<Trainer>(std::move(cfg), data);
  trainer->load_state(file);
  return trainer;
}

std::unique_ptr<Trainer> Trainer::from_checkpoint(const std::string& path, const Dataset& data) {
  return from_checkpoint(read_checkpoint_file(path), data);
}

int64_t Trainer::stage_for(int64_t step) const {
  if (!stagewise(cfg_.train.mode)) return 1;
  return step >= cfg_.train.total_steps / 2 ? 2 : 1;
}

int64_t Trainer::stage() const { return stage_for(step_); }

bool Trainer::uncond_active() const {
  switch (cfg_.train.mode) {
    case TrainMode::kJoint:
    case TrainMode::kUncondOnly: return true;
    case TrainMode::kCondOnly: return false;
    case TrainMode::kStageUncondThenCond: return stage() == 1;
    case TrainMode::kStageCondThenUncond: return stage() == 2;
  }
  return false;
}

bool Trainer::cond_active() const {
  switch (cfg_.train.mode) {
    case TrainMode::kJoint:
    case TrainMode::kCondOnly: return true;
    case TrainMode::kUncondOnly: return false;
    case TrainMode::kStageUncondThenCond: return stage() == 2;
    case TrainMode::kStageCondThenUncond: return stage() == 1;
  }
  return false;
}

std::vector<torch::Tensor> Trainer::trainable_generator_parameters() {
  std::vector<torch::Tensor> out;
  const bool second = stage() == 2;
  switch (cfg_.train.mode) {
    case TrainMode::kJoint:
      out = gen_->parameters();
      break;
    case TrainMode::kCondOnly:
      append(out, gen_->sc->parameters());
      append(out, gen_->sg->parameters());
      break;
    case TrainMode::kUncondOnly:
      append(out, gen_->su->parameters());
      append(out, gen_->sg->parameters());
      break;
    case TrainMode::kStageUncondThenCond:
      if (second) {
        append(out, gen_->sc->parameters());
      } else {
        append(out, gen_->su->parameters());
        append(out, gen_->sg->parameters());
      }
      break;
    case TrainMode::kStageCondThenUncond:
      if (second) {
        append(out, gen_->su->parameters());
      } else {
        append(out, gen_->sc->parameters());
        append(out, gen_->sg->parameters());
      }
      break;
  }
  return out;
}

void Trainer::configure_stage() {
  const int64_t s = stage();
  if (s == configured_stage_) return;
  configured_stage_ = s;
  set_requires_grad(*gen_, false);
  // Frozen parameters must not carry gradients from the previous stage.
  for (auto& p : gen_->parameters()) p.mutable_grad() = torch::Tensor();
  auto params = trainable_generator_parameters();
  for (auto& p : params) p.requires_grad_(true);
  const auto& tc = cfg_.train;
  opt_g_ = std::make_unique<torch::optim::Adam>(
      params, torch::optim::AdamOptions(tc.lr).betas({tc.adam_b1, tc.adam_b2}).eps(tc.adam_eps));
}

std::pair<LabeledBatch, UnlabeledBatch> Trainer::next_batches() {
  const auto& tc = cfg_.train;
  auto draw = [&](const std::vector<int64_t>& pool, int64_t n, std::vector<int64_t>& picked) {
    auto pos = torch::randint(static_cast<int64_t>(pool.size()), {n}, rng_, torch::kInt64);
    picked.resize(n);
    for (int64_t i = 0; i < n; ++i) picked[i] = pool[pos[i].item<int64_t>()];
    auto idx = torch::tensor(picked, torch::kInt64);
    auto flip = (torch::rand({n}, rng_, torch::kFloat64) < tc.flip_prob).view({n, 1, 1, 1});
    return std::pair{idx, flip};
  };
  LabeledBatch lab;
  UnlabeledBatch unl;
  if (cond_active()) {
    auto [idx, flip] = draw(labeled_idx_, tc.effective_bs_cond(), lab.indices);
    auto x = images_.index_select(0, idx);
    auto s = seg_.index_select(0, idx);
    lab.images = torch::where(flip, x.flip({3}), x);
    lab.seg = torch::where(flip, s.flip({3}), s);
  }
  if (uncond_active()) {
    auto [idx, flip] = draw(uncond_idx_, tc.bs_uncond, unl.indices);
    auto x = images_.index_select(0, idx);
    unl.images = torch::where(flip, x.flip({3}), x);
  }
  return {std::move(lab), std::move(unl)};
}

StepMetrics Trainer::update_discriminator(const LabeledBatch& lab, const UnlabeledBatch& unl) {
  const auto& tc = cfg_.train;
  const auto& mc = cfg_.model;
  const bool ua = uncond_active();
  const bool ca = cond_active();
  if (ua && (!unl.images.defined() || unl.images.size(0) != tc.bs_uncond)) {
    throw ConfigError("unconditional batch must hold " + std::to_string(tc.bs_uncond) + " images");
  }
  if (ca && (!lab.images.defined() || !lab.seg.defined() ||
             lab.images.size(0) != tc.effective_bs_cond() || lab.seg.size(0) != lab.images.size(0))) {
    throw ConfigError("conditional batch must hold " + std::to_string(tc.effective_bs_cond()) +
                      " labeled images");
  }

  StepMetrics m;
  m.step = step_ + 1;
  m.stage = stage();
  const int64_t nu = ua ? unl.images.size(0) : 0;
  const int64_t nc = ca ? lab.images.size(0) : 0;
  m.cond_batch = nc;
  m.uncond_batch = nu;
  const double w = tc.uncond_loss_weight;
  const bool r1_now = ua && tc.r1_gamma > 0.0 && m.step % tc.r1_interval == 0;
  const bool mix = ca && tc.lambda_labelmix > 0.0;

  torch::Tensor fake;
  {
    torch::NoGradGuard no_grad;
    fake = gen_->generate_mixed(ua ? sample_latent(nu, mc.latent_dim, rng_) : torch::Tensor(),
                                ca ? sample_latent(nc, mc.noise_dim, rng_) : torch::Tensor(), lab.seg,
                                GumbelMode::kTrain, rng_);
  }

  // Rows: [real_u, fake_u | real_c, fake_c, mixed]; one encoder pass for all of them.
  std::vector<torch::Tensor> rows;
  torch::Tensor mask;
  if (ua) {
    rows.push_back(unl.images);
    rows.push_back(fake.narrow(0, 0, nu));
  }
  if (ca) {
    auto fake_c = fake.narrow(0, nu, nc);
    rows.push_back(lab.images);
    rows.push_back(fake_c);
    if (mix) {
      mask = labelmix_mask(lab.seg, rng_);
      rows.push_back(mask * lab.images + (1.0 - mask) * fake_c);
    }
  }

  disc_->train();
  opt_d_->zero_grad();
  auto out = disc_->forward_split(torch::cat(rows, 0), 2 * nu);
  auto total = torch::zeros({});
  if (ua) {
    auto d_u = loss_d_uncond(out.image_logit.narrow(0, 0, nu), out.image_logit.narrow(0, nu, nu));
    total = total + w * d_u;
    m.d_uncond = d_u.item<double>();
    m.d_uncond_weighted = w * m.d_uncond;
    if (r1_now) {
      auto r1 = r1_penalty(unl.images, [this](const torch::Tensor& x) { return disc_->image_logit(x); },
                           tc.r1_gamma, static_cast<double>(tc.r1_interval));
      total = total + r1;
      m.r1 = r1.item<double>();
      m.r1_applied = true;
    }
  }
  if (ca) {
    auto real_logits = out.pixel_logits.narrow(0, 0, nc);
    auto fake_logits = out.pixel_logits.narrow(0, nc, nc);
    auto d_c = loss_d_cond(real_logits, lab.seg, fake_logits, class_weights(lab.seg));
    total = total + d_c;
    m.d_cond = d_c.item<double>();
    if (mix) {
      auto lm = labelmix_consistency(out.pixel_logits.narrow(0, 2 * nc, nc), real_logits, fake_logits, mask);
      total = total + tc.lambda_labelmix * lm;
      m.labelmix = lm.item<double>();
    }
  }
  m.d_total = total.item<double>();
  if (total.requires_grad()) total.backward();
  m.grad_norm_d = norm_of_grads(disc_->parameters());
  if (!std::isfinite(m.d_total) || !std::isfinite(m.grad_norm_d)) {
    throw NumericalError("non-finite discriminator update: " + m.to_log_line());
  }
  opt_d_->step();
  return m;
}

void Trainer::update_generator(const LabeledBatch& lab, const UnlabeledBatch& /*unlabeled*/, StepMetrics& m) {
  const auto& tc = cfg_.train;
  const auto& mc = cfg_.model;
  const int64_t nu = uncond_active() ? tc.bs_uncond : 0;
  const int64_t nc = cond_active() ? lab.images.size(0) : 0;
  const double w = tc.uncond_loss_weight;

  // The discriminator is a fixed function here: eval mode leaves its power-iteration state alone.
  disc_->eval();
  set_requires_grad(*disc_, false);
  opt_g_->zero_grad();
  auto total = torch::zeros({});
  try {
    auto fake = gen_->generate_mixed(nu ? sample_latent(nu, mc.latent_dim, rng_) : torch::Tensor(),
                                     nc ? sample_latent(nc, mc.noise_dim, rng_) : torch::Tensor(), lab.seg,
                                     GumbelMode::kTrain, rng_);
    auto out = disc_->forward_split(fake, nu);
    if (nu) {
      auto g_u = loss_g_uncond(out.image_logit);
      total = total + w * g_u;
      m.g_uncond = g_u.item<double>();
      m.g_uncond_weighted = w * m.g_uncond;
    }
    if (nc) {
      auto g_c = loss_g_cond(out.pixel_logits, lab.seg, class_weights(lab.seg));
      total = total + g_c;
      m.g_cond = g_c.item<double>();
    }
    m.g_total = total.item<double>();
    if (total.requires_grad()) total.backward();
  } catch (...) {
    set_requires_grad(*disc_, true);
    disc_->train();
    throw;
  }
  set_requires_grad(*disc_, true);
  disc_->train();
  m.grad_norm_g = norm_of_grads(gen_->parameters());
  if (!std::isfinite(m.g_total) || !std::isfinite(m.grad_norm_g)) {
    throw NumericalError("non-finite generator update: " + m.to_log_line());
  }
  opt_g_->step();
}

StepMetrics Trainer::train_step(const LabeledBatch& labeled, const UnlabeledBatch& unlabeled) {
  const auto t0 = std::chrono::steady_clock::now();
  configure_stage();
  auto m = update_discriminator(labeled, unlabeled);
  update_generator(labeled, unlabeled, m);
  ema_update(*gen_, *ema_, cfg_.train.ema_decay);
  ++step_;
  configure_stage();
  m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return m;
}

StepMetrics Trainer::step() {
  configure_stage();
  auto [lab, unl] = next_batches();
  return train_step(lab, unl);
}

CheckpointFile Trainer::to_checkpoint() const {
  CheckpointFile file;
  file.add("meta/step", torch::tensor({step_}, torch::kInt64));
  file.add_bytes("meta/config", serialize_run_config(cfg_));
  file.add("rng/train", rng_.get_state());
  store_module(file, *gen_, "gen/");
  store_module(file, *ema_, "ema/");
  store_module(file, *disc_, "disc/");
  store_adam(file, *opt_g_, *gen_, "opt_g/");
  store_adam(file, *opt_d_, *disc_, "opt_d/");
  return file;
}

void Trainer::load_state(const CheckpointFile& file) {
  load_module(file, *gen_, "gen/");
  load_module(file, *ema_, "ema/");
  load_module(file, *disc_, "disc/");
  step_ = file.tensor("meta/step").item<int64_t>();
  if (step_ < 0) throw IntegrityError("checkpoint has a negative step counter");
  configured_stage_ = 0;
  configure_stage();
  load_adam(file, *opt_g_, *gen_, "opt_g/");
  load_adam(file, *opt_d_, *disc_, "opt_d/");
  rng_.set_state(file.tensor("rng/train"));
}

void Trainer::save_checkpoint(const std::string& path) const { write_checkpoint_file(path, to_checkpoint()); }

LoadedGenerator load_ema_generator(const std::string& path) {
  const auto file = read_checkpoint_file(path);
  LoadedGenerator out;
  out.config = parse_run_config(file.bytes("meta/config"));
  out.config.finalize();
  out.generator = HybridGenerator(out.config.model, out.config.train.gumbel_tau);
  load_module(file, *out.generator, "ema/");
  out.generator->eval();
  out.step = file.tensor("meta/step").item<int64_t>();
  return out;
}

namespace {

void write_sample_grids(HybridGenerator& gen, const Dataset& data, const RunConfig& cfg,
                        const fs::path& dir, int64_t step) {
  torch::NoGradGuard no_grad;
  const int64_t n = cfg.train.sample_grid;
  auto rng = at::make_generator<at::CPUGeneratorImpl>(cfg.eval.seed);
  auto uncond = gen->generate_uncond(sample_latent(n, cfg.model.latent_dim, rng), GumbelMode::kEval);
  const auto stem = checkpoint_name(step).substr(0, 11);  // "step_NNNNNN"
  write_png((dir / (stem + "_uncond.png")).string(), make_grid(uncond));
  if (data.val.empty()) return;
  std::vector<LabeledSample> maps;
  for (int64_t i = 0; i < n; ++i) maps.push_back(data.val[i % static_cast<int64_t>(data.val.size())]);
  auto seg = one_hot_encode(stack_labels(maps), cfg.model.num_classes);
  auto cond = gen->generate_cond(sample_latent(n, cfg.model.noise_dim, rng), seg, GumbelMode::kEval);
  write_png((dir / (stem + "_cond.png")).string(), make_grid(cond));
}

std::string eval_line(int64_t step, const MetricsReport& r) {
  std::ostringstream out;
  out << "eval step=" << step;
  if (!r.fid_sets.empty()) out << " fid=" << fmt(r.fid.mean) << " fid_std=" << fmt(r.fid.std);
  if (!r.cfid_sets.empty()) out << " cfid=" << fmt(r.cfid.mean) << " cfid_std=" << fmt(r.cfid.std);
  if (!r.miou_sets.empty()) out << " miou=" << fmt(r.miou.mean) << " miou_std=" << fmt(r.miou.std);
  return out.str();
}

}  // namespace

RunArtifacts run(const RunConfig& cfg, const Dataset& data, const std::string& run_dir,
                 const RunOptions& options) {
  const fs::path root(run_dir);
  std::error_code ec;
  fs::create_directories(root / "ckpt", ec);
  fs::create_directories(root / "samples", ec);
  if (ec) throw IoError("cannot create run directory '" + run_dir + "': " + ec.message());
  RunLock lock(root);

  auto trainer = options.resume ? Trainer::from_checkpoint(*options.resume, data)
                                : std::make_unique<Trainer>(cfg, data);
  auto& tr = *trainer;
  const auto& rc = tr.config();
  const auto& tc = rc.train;

  {
    std::ofstream snap(root / "config.snapshot", std::ios::trunc);
    snap << serialize_run_config(rc);
    if (!snap) throw IoError("cannot write config snapshot in '" + run_dir + "'");
  }
  std::ofstream log(root / "metrics.log", options.resume ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot open metrics.log in '" + run_dir + "'");

  RunArtifacts art;
  art.run_dir = run_dir;
  std::unique_ptr<FeatureExtractor> extractor;
  if (options.evaluate) extractor = make_extractor(rc.eval, rc.model.resolution);
  EvalOptions eo;
  eo.sets = rc.eval.sets;
  if (rc.eval.samples_per_set > 0) eo.samples_per_set = rc.eval.samples_per_set;
  eo.seed = rc.eval.seed;
  eo.unconditional = mode_uses_uncond(tc.mode);
  eo.conditional = mode_uses_cond(tc.mode);

  auto flush_line = [&](const std::string& line) {
    log << line << '\n';
    log.flush();
    if (!log) throw IoError("cannot append to metrics.log (disk full?)");
    if (options.verbose) std::cerr << line << '\n';
  };
  auto checkpoint = [&](int64_t step) {
    const auto path = (root / "ckpt" / checkpoint_name(step)).string();
    tr.save_checkpoint(path);
    art.final_checkpoint = path;
    flush_line("checkpoint step=" + std::to_string(step) + " path=" + path);
  };
  auto evaluate = [&](int64_t step) {
    if (options.evaluate) {
      auto report = evaluate_generator(tr.ema(), data, *extractor, eo);
      flush_line(eval_line(step, report));
      art.evaluations.emplace_back(step, std::move(report));
    }
    if (options.samples) write_sample_grids(tr.ema(), data, rc, root / "samples", step);
  };

  if (tr.completed_steps() == 0) {
    checkpoint(0);
    evaluate(0);
  }
  while (tr.completed_steps() < tc.total_steps) {
    StepMetrics m;
    try {
      m = tr.step();
    } catch (const NumericalError& e) {
      flush_line("abort step=" + std::to_string(tr.completed_steps() + 1) + " reason=non_finite");
      throw;
    }
    flush_line(m.to_log_line());
    art.history.push_back(m);
    const bool last = m.step == tc.total_steps;
    if (m.step % tc.checkpoint_interval == 0 || last) checkpoint(m.step);
    if (m.step % tc.eval_interval == 0 || last) evaluate(m.step);
  }
  if (art.final_checkpoint.empty()) {
    art.final_checkpoint = (root / "ckpt" / checkpoint_name(tr.completed_steps())).string();
    if (!fs::exists(art.final_checkpoint)) checkpoint(tr.completed_steps());
  }
  art.final_step = tr.completed_steps();
  return art;
}

namespace {

std::string cell(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", *v);
  return buf;
}

}  // namespace

std::string AblationTable::to_text() const {
  std::ostringstream out;
  out << "budget " << budget << " steps\n";
  char line[160];
  std::snprintf(line, sizeof(line), "%-24s %12s %12s %8s\n", "mode", "FID", "CFID", "mIoU");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%-24s %12s %12s %8s\n", std::string(to_string(r.mode)).c_str(),
                  cell(r.fid).c_str(), cell(r.cfid).c_str(), cell(r.miou).c_str());
    out << line;
  }
  return out.str();
}

std::string AblationTable::to_json() const {
  auto num = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string("null"); };
  std::ostringstream out;
  out << "{\"budget\": " << budget << ", \"rows\": [";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    out << (i ? ", " : "") << "{\"mode\": \"" << to_string(r.mode) << "\", \"fid\": " << num(r.fid)
        << ", \"cfid\": " << num(r.cfid) << ", \"miou\": " << num(r.miou)
        << ", \"seconds\": " << fmt(r.seconds) << "}";
  }
  out << "]}\n";
  return out.str();
}

AblationTable run_ablation(const RunConfig& base, const Dataset& data, const std::string& out_dir,
                           int64_t budget, bool verbose) {
  if (budget < 0) throw ConfigError("ablation budget must be non-negative");
  AblationTable table;
  table.budget = budget;
  for (auto mode : kAblationModes) {
    RunConfig cfg = base;
    cfg.train.mode = mode;
    cfg.train.total_steps = budget;
    cfg.finalize();
    const auto t0 = std::chrono::steady_clock::now();
    RunOptions options;
    options.evaluate = false;
    options.verbose = verbose;
    const auto dir = (fs::path(out_dir) / std::string(to_string(mode))).string();
    auto art = run(cfg, data, dir, options);

    auto loaded = load_ema_generator(art.final_checkpoint);
    auto extractor = make_extractor(cfg.eval, cfg.model.resolution);
    EvalOptions eo;
    eo.sets = cfg.eval.sets;
    if (cfg.eval.samples_per_set > 0) eo.samples_per_set = cfg.eval.samples_per_set;
    eo.seed = cfg.eval.seed;
    eo.unconditional = mode_uses_uncond(mode);
    eo.conditional = mode_uses_cond(mode);
    const auto report = evaluate_generator(loaded.generator, data, *extractor, eo);

    AblationRow row;
    row.mode = mode;
    if (eo.unconditional) row.fid = report.fid.mean;
    if (eo.conditional) {
      row.cfid = report.cfid.mean;
      row.miou = report.miou.mean;
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (verbose) {
      std::cerr << "ablation " << to_string(mode) << ": fid=" << cell(row.fid) << " cfid=" << cell(row.cfid)
                << " miou=" << cell(row.miou) << '\n';
    }
    table.rows.push_back(row);
  }
  return table;
}

}  // namespace ocogan
