#include "mvcc/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "mvcc/losses.hpp"
#include "mvcc/sampler.hpp"

namespace mvcc {

namespace {

enum Stream : std::uint64_t { kLabeled = 1, kUnlabeled = 2, kAugment = 3, kNoise = 4, kSampling = 5 };

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

double ramp(const TrainConfig& cfg, std::size_t step) {
  if (cfg.unsup_warmup == 0 || step >= cfg.unsup_warmup) return 1.0;
  return static_cast<double>(step) / static_cast<double>(cfg.unsup_warmup);
}

struct Flip {
  std::size_t pixel;
  int from, to;
};

// Flips each hard class to a uniformly random other class with probability
// eta.
std::vector<Flip> inject_noise(std::vector<int>& hard, std::size_t num_classes, double eta, Rng& rng) {
  std::vector<Flip> flips;
  for (std::size_t p = 0; p < hard.size(); ++p) {
    if (!rng.bernoulli(eta)) continue;
    int to = static_cast<int>(rng.below(num_classes - 1));
    if (to >= hard[p]) ++to;
    flips.push_back({p, hard[p], to});
    hard[p] = to;
  }
  return flips;
}

// Swaps the entries of the old and new class in each flipped soft row, so the
// row's argmax follows the flip.
void apply_flips(std::vector<double>& soft, std::span<const Flip> flips, std::size_t num_classes) {
  for (const Flip& f : flips) {
    std::swap(soft[f.pixel * num_classes + static_cast<std::size_t>(f.from)],
              soft[f.pixel * num_classes + static_cast<std::size_t>(f.to)]);
  }
}

bool has_positive_pair(const std::vector<int>& classes) {
  std::vector<int> sorted = classes;
  std::sort(sorted.begin(), sorted.end());
  return std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end();
}

PseudoLabel mix_pseudo(const PseudoLabel& base, const PseudoLabel& donor, const Box& box, const Mask& valid,
                       std::size_t h, std::size_t w, std::size_t c) {
  auto mixed = [&](const Tensor& a, const Tensor& b) {
    return Tensor::constant(a.shape(), mix_in_box(a.data(), b.data(), box, h, w, c, true));
  };
  return {mixed(base.rows, donor.rows), mixed(base.view_rows, donor.view_rows),
          mixed(base.view_rows_prime, donor.view_rows_prime), valid};
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kNoCC: return "no_cc";
    case Variant::kNCE: return "nce";
    case Variant::kNoViewCoherentCutMix: return "no_view_coherent_cutmix";
    case Variant::kSameGeometricAug: return "same_geometric_aug";
    case Variant::kSupervisedOnly: return "supervised_only";
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::kFull, Variant::kNoCC, Variant::kNCE, Variant::kNoViewCoherentCutMix,
                    Variant::kSameGeometricAug, Variant::kSupervisedOnly}) {
    if (to_string(v) == name) return v;
  }
  throw ConfigError("unknown variant `" + name + "`");
}

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  if (data_dir.empty()) dataset.validate();
  if (batch_labeled == 0 || batch_unlabeled == 0) throw ConfigError("batch sizes must be positive");
  if (!(base_lr > 0.0) || feature_lr_mult < 0.0) throw ConfigError("learning rates must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
  if (poly_power < 0.0) throw ConfigError("poly_power must be non-negative");
  if (steps == 0) throw ConfigError("steps must be positive");
  if (ema_momentum < 0.0 || ema_momentum > 1.0) throw ConfigError("ema_momentum must be in [0, 1]");
  if (weights.unsup < 0.0 || weights.cc < 0.0) throw ConfigError("loss weights must be non-negative");
  if (num_samples < 2) throw ConfigError("num_samples must be at least 2");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) throw ConfigError("label_smoothing must be in [0, 1)");
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (eta < 0.0 || eta > 1.0) throw ConfigError("eta must be in [0, 1]");
  if (eval_every == 0) throw ConfigError("eval_every must be positive");
  if (model.num_classes != dataset.num_classes) throw ConfigError("model and dataset class counts differ");
  if (augment.view.scale_min <= 0.0 || augment.view.scale_max < augment.view.scale_min) {
    throw ConfigError("invalid scale range");
  }
  if (augment.view.max_translation < 0.0 || augment.view.max_translation > 0.1) {
    throw ConfigError("max_translation must be in [0, 0.1]");
  }
  if (augment.cutmix.prob < 0.0 || augment.cutmix.prob > 1.0) throw ConfigError("cutmix_prob must be in [0, 1]");
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& kv) {
  TrainConfig c;
  auto size = [&](const char* key, std::size_t fallback) {
    const long long v = kv.get_int(key, static_cast<long long>(fallback));
    if (v < 0) throw ConfigError(std::string("key ") + key + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.data_dir = kv.get_string("data_dir", c.data_dir);
  c.dataset = DatasetConfig::from_config(kv);
  c.batch_labeled = size("batch_labeled", c.batch_labeled);
  c.batch_unlabeled = size("batch_unlabeled", c.batch_unlabeled);
  c.base_lr = kv.get_double("base_lr", c.base_lr);
  c.feature_lr_mult = kv.get_double("feature_lr_mult", c.feature_lr_mult);
  c.momentum = kv.get_double("momentum", c.momentum);
  c.poly_power = kv.get_double("poly_power", c.poly_power);
  c.steps = size("steps", c.steps);
  c.ema_momentum = kv.get_double("ema_momentum", c.ema_momentum);
  c.weights.unsup = kv.get_double("w_u", c.weights.unsup);
  c.weights.cc = kv.get_double("w_cc", c.weights.cc);
  c.unsup_warmup = size("unsup_warmup", c.unsup_warmup);
  c.num_samples = size("num_samples", c.num_samples);
  c.label_smoothing = kv.get_double("label_smoothing", c.label_smoothing);
  c.tau = kv.get_double("tau", c.tau);
  c.variant = parse_variant(kv.get_string("variant", to_string(c.variant)));
  const std::string target = kv.get_string("cc_target", "pseudo_label");
  if (target == "pseudo_label") {
    c.cc_target = CorrelationTarget::kPseudoLabel;
  } else if (target == "opposite_view") {
    c.cc_target = CorrelationTarget::kOppositeView;
  } else {
    throw ConfigError("cc_target must be pseudo_label or opposite_view");
  }
  c.eta = kv.get_double("eta", c.eta);
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(c.seed)));
  c.eval_every = size("eval_every", c.eval_every);
  c.model.num_classes = c.dataset.num_classes;
  if (kv.has("widths")) {
    c.model.widths.clear();
    for (double w : kv.get_double_list("widths")) {
      if (w < 1.0 || w != std::floor(w)) throw ConfigError("widths must be positive integers");
      c.model.widths.push_back(static_cast<std::size_t>(w));
    }
  }
  c.augment.view.scale_min = kv.get_double("scale_min", c.augment.view.scale_min);
  c.augment.view.scale_max = kv.get_double("scale_max", c.augment.view.scale_max);
  c.augment.view.max_translation = kv.get_double("max_translation", c.augment.view.max_translation);
  c.augment.view.flip_prob = kv.get_double("flip_prob", c.augment.view.flip_prob);
  c.augment.jitter.brightness_max = kv.get_double("brightness", c.augment.jitter.brightness_max);
  c.augment.jitter.brightness_min = -c.augment.jitter.brightness_max;
  c.augment.jitter.contrast_max = kv.get_double("contrast", c.augment.jitter.contrast_max);
  c.augment.jitter.contrast_min = 1.0 / c.augment.jitter.contrast_max;
  c.augment.cutmix.prob = kv.get_double("cutmix_prob", c.augment.cutmix.prob);
  c.augment.cutmix.area_min = kv.get_double("cutmix_area_min", c.augment.cutmix.area_min);
  c.augment.cutmix.area_max = kv.get_double("cutmix_area_max", c.augment.cutmix.area_max);
  c.augment.same_geometry = c.variant == Variant::kSameGeometricAug;
  c.validate();
  return c;
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  if (!data_dir.empty()) os << "data_dir = " << data_dir << '\n';
  os << dataset.to_text();
  os << "batch_labeled = " << batch_labeled << "\nbatch_unlabeled = " << batch_unlabeled
     << "\nbase_lr = " << fmt(base_lr) << "\nfeature_lr_mult = " << fmt(feature_lr_mult)
     << "\nmomentum = " << fmt(momentum) << "\npoly_power = " << fmt(poly_power) << "\nsteps = " << steps
     << "\nema_momentum = " << fmt(ema_momentum) << "\nw_u = " << fmt(weights.unsup) << "\nw_cc = " << fmt(weights.cc)
     << "\nunsup_warmup = " << unsup_warmup << "\nnum_samples = " << num_samples
     << "\nlabel_smoothing = " << fmt(label_smoothing) << "\ntau = " << fmt(tau) << "\nvariant = " << to_string(variant)
     << "\ncc_target = " << (cc_target == CorrelationTarget::kPseudoLabel ? "pseudo_label" : "opposite_view")
     << "\neta = " << fmt(eta) << "\nseed = " << seed << "\neval_every = " << eval_every
     << "\nwidths = " << join_sizes(model.widths) << "\nscale_min = " << fmt(augment.view.scale_min)
     << "\nscale_max = " << fmt(augment.view.scale_max) << "\nmax_translation = " << fmt(augment.view.max_translation)
     << "\nflip_prob = " << fmt(augment.view.flip_prob) << "\nbrightness = " << fmt(augment.jitter.brightness_max)
     << "\ncontrast = " << fmt(augment.jitter.contrast_max) << "\ncutmix_prob = " << fmt(augment.cutmix.prob)
     << "\ncutmix_area_min = " << fmt(augment.cutmix.area_min) << "\ncutmix_area_max = " << fmt(augment.cutmix.area_max)
     << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Optimizer

void configure_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

double poly_lr(double base, std::size_t step, std::size_t total, double power) {
  if (total == 0 || step > total) throw std::invalid_argument("poly_lr: need 0 <= step <= total, total > 0");
  return base * std::pow(1.0 - static_cast<double>(step) / static_cast<double>(total), power);
}

void sgd_momentum_step(SegNet& net, std::vector<std::vector<double>>& velocities, double lr, double momentum,
                       double feature_lr_mult) {
  if (velocities.size() != net.params.size()) velocities.assign(net.params.size(), {});
  for (std::size_t i = 0; i < net.params.size(); ++i) {
    Tensor& p = net.params[i].value;
    auto theta = p.mutable_data();
    auto& v = velocities[i];
    if (v.size() != theta.size()) v.assign(theta.size(), 0.0);
    const auto grad = p.grad();
    const double rate = net.is_feature_extractor(i) ? lr * feature_lr_mult : lr;
    for (std::size_t k = 0; k < theta.size(); ++k) {
      v[k] = momentum * v[k] + (grad ? (*grad)[k] : 0.0);
      theta[k] -= rate * v[k];
    }
  }
}

StepRecord RunRecord::mean_losses() const {
  StepRecord m;
  if (steps.empty()) return m;
  for (const auto& s : steps) {
    m.l_sup += s.l_sup;
    m.l_unsup += s.l_unsup;
    m.l_cc += s.l_cc;
    m.total += s.total;
  }
  const double n = static_cast<double>(steps.size());
  m.l_sup /= n;
  m.l_unsup /= n;
  m.l_cc /= n;
  m.total /= n;
  m.step = steps.back().step;
  return m;
}

// ---------------------------------------------------------------------------
// State and data

TrainState TrainState::init(const TrainConfig& cfg) {
  TrainState s;
  s.student = SegNet::init(cfg.model, Rng(cfg.seed).stream(0).next_u64());
  s.teacher = EmaTeacher::from_student(s.student, cfg.ema_momentum);
  return s;
}

TrainData TrainData::from(Dataset train, Dataset eval) {
  TrainData d;
  d.train = std::move(train);
  d.eval = std::move(eval);
  d.labeled = d.train.labeled_indices();
  d.unlabeled = d.train.unlabeled_indices();
  if (d.labeled.empty()) throw std::invalid_argument("training data has no labeled images");
  if (d.eval.size() == 0) throw std::invalid_argument("evaluation set is empty");
  return d;
}

TrainData TrainData::load(const TrainConfig& cfg) {
  if (!cfg.data_dir.empty()) {
    const std::filesystem::path dir(cfg.data_dir);
    Dataset train = load_dataset(dir / "train", cfg.model.num_classes);
    Dataset eval = load_dataset(dir / "eval", cfg.model.num_classes);
    return from(std::move(train), std::move(eval));
  }
  Dataset train = generate_dataset(cfg.dataset, cfg.dataset.seed);
  train.manifest = split(train, cfg.dataset.labeled_ratio, cfg.dataset.seed);
  return from(std::move(train), generate_eval_dataset(cfg.dataset));
}

// ---------------------------------------------------------------------------
// Step

StepRecord train_step(const TrainConfig& cfg, TrainState& state, const TrainData& data, std::size_t step,
                      StepTrace* trace) {
  const Rng root = Rng(cfg.seed).stream(step + 1);
  Rng labeled_rng = root.stream(kLabeled);
  Rng unlabeled_rng = root.stream(kUnlabeled);
  Rng aug_rng = root.stream(kAugment);
  Rng noise_rng = root.stream(kNoise);
  Rng sample_rng = root.stream(kSampling);
  const std::size_t c = cfg.model.num_classes;
  const std::size_t h = data.train.height, w = data.train.width;

  StepRecord rec;
  rec.step = step;
  rec.lr = poly_lr(cfg.base_lr, step, cfg.steps, cfg.poly_power);

  // Supervised term.
  Tensor l_sup = Tensor::scalar(0.0);
  for (std::size_t b = 0; b < cfg.batch_labeled; ++b) {
    const std::size_t item = data.labeled[labeled_rng.below(data.labeled.size())];
    if (trace) trace->labeled_items.push_back(item);
    l_sup = add(l_sup, supervised_ce(forward(state.student, data.train.images[item]), data.train.labels[item],
                                     cfg.label_smoothing));
  }
  l_sup = scale(l_sup, 1.0 / static_cast<double>(cfg.batch_labeled));

  Tensor l_unsup = Tensor::scalar(0.0);
  Tensor l_cc = Tensor::scalar(0.0);
  const bool unsupervised = cfg.variant != Variant::kSupervisedOnly && !data.unlabeled.empty();
  if (unsupervised) {
    AugmentConfig augment = cfg.augment;
    augment.same_geometry = augment.same_geometry || cfg.variant == Variant::kSameGeometricAug;
    const std::size_t bu = cfg.batch_unlabeled;
    std::vector<ViewPair> pairs;
    std::vector<PseudoLabel> pseudo;
    for (std::size_t b = 0; b < bu; ++b) {
      const std::size_t item = data.unlabeled[unlabeled_rng.below(data.unlabeled.size())];
      if (trace) trace->unlabeled_items.push_back(item);
      pairs.push_back(make_view_pair(data.train.images[item], aug_rng, augment));
      pseudo.push_back(pseudo_label(state.teacher, pairs.back()));
    }

    // CutMix with the next item of the batch as donor; targets follow the
    // canonical box.
    std::vector<ViewPair> mixed(bu);
    std::vector<PseudoLabel> targets(bu);
    for (std::size_t b = 0; b < bu; ++b) {
      const std::size_t donor = (b + 1) % bu;
      if (cfg.variant == Variant::kNoViewCoherentCutMix) {
        mixed[b] = incoherent_cutmix(pairs[b], pairs[donor], aug_rng, cfg.augment.cutmix, donor);
      } else if (aug_rng.bernoulli(cfg.augment.cutmix.prob)) {
        const Box box = sample_cutmix_box(aug_rng, h, w, cfg.augment.cutmix);
        mixed[b] = view_coherent_cutmix(pairs[b], pairs[donor], box, donor);
      } else {
        mixed[b] = pairs[b];
      }
      targets[b] = mixed[b].cutmix ? mix_pseudo(pseudo[b], pseudo[donor], mixed[b].cutmix->box, mixed[b].valid, h, w, c)
                                   : pseudo[b];
    }

    // Consistency per image; the correlation term samples N pixels over the
    // whole mini-batch.
    std::vector<Tensor> rows, rows_prime;
    std::vector<int> hard;
    std::vector<double> soft, soft_prime;
    std::vector<std::uint8_t> eligible;
    for (std::size_t b = 0; b < bu; ++b) {
      const ViewPair& pair = mixed[b];
      const PseudoLabel& target = targets[b];
      rows.push_back(canonical_probability_rows(forward(state.student, pair.x), pair.t));
      rows_prime.push_back(canonical_probability_rows(forward(state.student, pair.x_prime), pair.t_prime));
      l_unsup = add(l_unsup, consistency_loss(rows.back(), rows_prime.back(), target.rows, pair.valid.bits));

      const std::vector<int> item_hard = hard_labels(target.rows.data(), c);
      hard.insert(hard.end(), item_hard.begin(), item_hard.end());
      eligible.insert(eligible.end(), pair.valid.bits.begin(), pair.valid.bits.end());
      if (cfg.cc_target == CorrelationTarget::kOppositeView) {
        soft.insert(soft.end(), target.view_rows_prime.data().begin(), target.view_rows_prime.data().end());
        soft_prime.insert(soft_prime.end(), target.view_rows.data().begin(), target.view_rows.data().end());
      } else {
        soft.insert(soft.end(), target.rows.data().begin(), target.rows.data().end());
      }
      if (trace) {
        trace->pairs.push_back(pair);
        trace->pseudo.push_back(target);
      }
    }
    l_unsup = scale(l_unsup, 1.0 / static_cast<double>(bu));

    if (cfg.eta > 0.0) {
      const std::vector<Flip> flips = inject_noise(hard, c, cfg.eta, noise_rng);
      apply_flips(soft, flips, c);
      if (!soft_prime.empty()) apply_flips(soft_prime, flips, c);
    }
    if (trace) {
      trace->hard = hard;
      trace->cc_target = soft;
    }

    if (cfg.variant != Variant::kNoCC) {
      const SampleSpec spec = make_sample_spec(hard, eligible, c, cfg.num_samples);
      const std::vector<std::size_t> idx = sample_pixels(spec, sample_rng);
      if (trace) trace->samples = idx;
      const Tensor f = gather_rows(concat_rows(rows), idx);
      const Tensor f_prime = gather_rows(concat_rows(rows_prime), idx);
      const std::size_t n_rows = hard.size();
      if (cfg.variant == Variant::kNCE) {
        std::vector<int> classes(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) classes[i] = hard[idx[i]];
        if (has_positive_pair(classes)) {
          l_cc = add(info_nce(f, classes, cfg.tau), info_nce(f_prime, classes, cfg.tau));
        }
      } else {
        CorrelationBatch batch{f, f_prime, gather_rows(Tensor::constant({n_rows, c}, soft), idx), std::nullopt, idx};
        if (!soft_prime.empty()) {
          batch.target_prime = gather_rows(Tensor::constant({n_rows, c}, soft_prime), idx);
        }
        l_cc = correlation_consistency(batch);
      }
    }
  }

  const double r = ramp(cfg, step);
  LossWeights wts{cfg.weights.unsup * r, cfg.variant == Variant::kNoCC ? 0.0 : cfg.weights.cc * r};
  const Tensor total = total_loss(l_sup, l_unsup, l_cc, wts);
  rec.l_sup = l_sup.item();
  rec.l_unsup = l_unsup.item();
  rec.l_cc = l_cc.item();
  rec.total = total.item();
  if (!std::isfinite(rec.total)) throw NumericError("non-finite total loss at step " + std::to_string(step));

  for (auto& p : state.student.params) p.value.zero_grad();
  backward(total);
  sgd_momentum_step(state.student, state.velocities, rec.lr, cfg.momentum, cfg.feature_lr_mult);
  ema_update(state.teacher, state.student);
  return rec;
}

// ---------------------------------------------------------------------------
// Evaluation and runs

std::vector<int> predict(const SegNet& net, const Tensor& img) {
  const Tensor logits = forward(net.frozen_copy(), img);
  const std::size_t c = logits.dim(0), hw = logits.dim(1) * logits.dim(2);
  auto d = logits.data();
  std::vector<int> out(hw, 0);
  for (std::size_t p = 0; p < hw; ++p) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (d[k * hw + p] > d[best * hw + p]) best = k;
    out[p] = static_cast<int>(best);
  }
  return out;
}

MiouResult evaluate(const SegNet& net, const Dataset& eval) {
  ConfusionMatrix cm(net.config.num_classes);
  const SegNet frozen = net.frozen_copy();
  for (std::size_t i = 0; i < eval.size(); ++i) cm.add(eval.labels[i], predict(frozen, eval.images[i]));
  return miou(cm);
}

RunRecord run_experiment(const TrainConfig& cfg, const TrainData& data, TrainState* final_state) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.config_text = cfg.to_text();
  TrainState state = TrainState::init(cfg);
  try {
    for (std::size_t step = 0; step < cfg.steps; ++step) {
      rec.steps.push_back(train_step(cfg, state, data, step));
      const std::size_t done = step + 1;
      if (done % cfg.eval_every == 0 || done == cfg.steps) {
        rec.evals.push_back({done, evaluate(state.student, data.eval).miou});
        rec.final_miou = std::max(rec.final_miou, rec.evals.back().miou);
      }
    }
  } catch (const NumericError& e) {
    rec.status = std::string("diverged: ") + e.what();
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (final_state) *final_state = std::move(state);
  return rec;
}

RunRecord run_experiment(const TrainConfig& cfg) { return run_experiment(cfg, TrainData::load(cfg)); }

std::string metrics_csv(const TrainConfig& cfg, const RunRecord& record) {
  std::ostringstream os;
  os << "variant,seed,eta,step,lr,l_sup,l_unsup,l_cc,total,miou\n";
  std::size_t from = 0;
  for (const auto& e : record.evals) {
    StepRecord m;
    std::size_t n = 0;
    for (; from < record.steps.size() && record.steps[from].step < e.step; ++from, ++n) {
      m.l_sup += record.steps[from].l_sup;
      m.l_unsup += record.steps[from].l_unsup;
      m.l_cc += record.steps[from].l_cc;
      m.total += record.steps[from].total;
      m.lr = record.steps[from].lr;
    }
    const double k = n ? static_cast<double>(n) : 1.0;
    os << to_string(cfg.variant) << ',' << cfg.seed << ',' << fmt(cfg.eta) << ',' << e.step << ',' << fmt(m.lr) << ','
       << fmt(m.l_sup / k) << ',' << fmt(m.l_unsup / k) << ',' << fmt(m.l_cc / k) << ',' << fmt(m.total / k) << ','
       << fmt(e.miou) << '\n';
  }
  return os.str();
}

std::vector<SuiteRow> run_suite(const std::vector<TrainConfig>& cfgs, std::size_t seeds,
                                const std::optional<TrainData>& shared_data) {
  if (seeds == 0) throw std::invalid_argument("run_suite: need at least one seed");
  std::vector<SuiteRow> runs, aggregates;
  for (const auto& base : cfgs) {
    std::optional<TrainData> own;
    if (!shared_data) own = TrainData::load(base);
    const TrainData& data = shared_data ? *shared_data : *own;
    std::vector<double> finals;
    std::vector<StepRecord> losses;
    for (std::size_t k = 0; k < seeds; ++k) {
      TrainConfig cfg = base;
      cfg.seed = base.seed + k;
      SuiteRow row{"run", cfg, 1, 0.0, 0.0, {}, "ok"};
      try {
        const RunRecord rec = run_experiment(cfg, data);
        row.final_miou = rec.final_miou;
        row.losses = rec.mean_losses();
        row.status = rec.status;
      } catch (const std::exception& e) {
        row.status = std::string("error: ") + e.what();
      }
      if (row.status == "ok") {
        finals.push_back(row.final_miou);
        losses.push_back(row.losses);
      }
      runs.push_back(row);
    }
    SuiteRow agg{"aggregate", base, finals.size(), 0.0, 0.0, {}, finals.empty() ? "no successful runs" : "ok"};
    if (!finals.empty()) {
      const double n = static_cast<double>(finals.size());
      for (std::size_t i = 0; i < finals.size(); ++i) {
        agg.final_miou += finals[i] / n;
        agg.losses.l_sup += losses[i].l_sup / n;
        agg.losses.l_unsup += losses[i].l_unsup / n;
        agg.losses.l_cc += losses[i].l_cc / n;
        agg.losses.total += losses[i].total / n;
      }
      double ss = 0.0;
      for (double f : finals) ss += (f - agg.final_miou) * (f - agg.final_miou);
      agg.miou_std = finals.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    }
    aggregates.push_back(agg);
  }
  runs.insert(runs.end(), aggregates.begin(), aggregates.end());
  return runs;
}

std::string suite_csv(const std::vector<SuiteRow>& rows) {
  std::ostringstream os;
  os << "kind,variant,ratio,w_u,w_cc,eta,seed,n_runs,final_miou,miou_std,l_sup,l_unsup,l_cc,total,status\n";
  for (const auto& r : rows) {
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    os << r.kind << ',' << to_string(r.cfg.variant) << ',' << fmt(r.cfg.dataset.labeled_ratio) << ','
       << fmt(r.cfg.weights.unsup) << ',' << fmt(r.cfg.weights.cc) << ',' << fmt(r.cfg.eta) << ','
       << (r.kind == "run" ? std::to_string(r.cfg.seed) : std::string()) << ',' << r.n_runs << ','
       << fmt(r.final_miou) << ',' << fmt(r.miou_std) << ',' << fmt(r.losses.l_sup) << ',' << fmt(r.losses.l_unsup)
       << ',' << fmt(r.losses.l_cc) << ',' << fmt(r.losses.total) << ',' << status << '\n';
  }
  return os.str();
}

std::vector<TrainConfig> expand_suite(const KeyValueConfig& kv) {
  std::vector<std::string> variants = kv.get_list("variants");
  std::vector<double> w_cc = kv.get_double_list("w_cc_values");
  std::vector<double> w_u = kv.get_double_list("w_u_values");
  std::vector<double> etas = kv.get_double_list("eta_values");
  const TrainConfig base = TrainConfig::from_config(kv);
  if (variants.empty()) variants.push_back(to_string(base.variant));
  if (w_cc.empty()) w_cc.push_back(base.weights.cc);
  if (w_u.empty()) w_u.push_back(base.weights.unsup);
  if (etas.empty()) etas.push_back(base.eta);
  std::vector<TrainConfig> out;
  for (const auto& v : variants)
    for (double wu : w_u)
      for (double wc : w_cc)
        for (double e : etas) {
          TrainConfig c = base;
          c.variant = parse_variant(v);
          c.augment.same_geometry = c.variant == Variant::kSameGeometricAug;
          c.weights = {wu, wc};
          c.eta = e;
          c.validate();
          out.push_back(c);
        }
  return out;
}

}  // namespace mvcc
