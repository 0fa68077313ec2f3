#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "ganinc/datagen.hpp"
#include "ganinc/errors.hpp"
#include "ganinc/losses.hpp"
#include "ganinc/memory.hpp"
#include "ganinc/model.hpp"
#include "ganinc/registry.hpp"
#include "ganinc/rng.hpp"

namespace ganinc {

struct TrainConfig {
  double lr = 0.001;
  int batch_size = 64;
  int patience = 5;
  int max_epochs = 100;
  double min_improvement = 1e-5;
  double grad_clip = 10.0;
};

struct LearnerConfig {
  NetworkConfig net;
  LossConfig loss;
  TrainConfig train;
  Budget budget = Budget::of(128);
  uint64_t seed = 0;
};

struct StepReport {
  int step = 0;
  std::vector<double> train_losses;
  std::vector<double> val_losses;
  int epochs_run = 0;
  std::string stop_reason;
};

struct MetricsReport {
  double detection_acc = 0;
  std::vector<std::pair<int, double>> per_arch_detection;  // (architecture, accuracy)
  double classification_acc = 0;
  std::vector<int> arch_order;                  // confusion row/column order
  std::vector<std::vector<int>> confusion;      // GAN test images only
  std::optional<double> aux_detector_acc;       // mt_mc detector head
};

// Stops when the validation objective fails to improve by at least
// min_improvement for `patience` consecutive epochs.
class EarlyStopper {
 public:
  EarlyStopper(int patience, double min_improvement)
      : patience_(patience), min_improvement_(min_improvement) {}

  bool observe(double val) {
    ++epoch_;
    if (val < best_ - min_improvement_) {
      best_ = val;
      best_epoch_ = epoch_;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }

  bool should_stop() const { return stale_ >= patience_; }
  int best_epoch() const { return best_epoch_; }

 private:
  int patience_;
  double min_improvement_;
  double best_ = std::numeric_limits<double>::infinity();
  int best_epoch_ = -1;
  int stale_ = 0;
  int epoch_ = -1;
};

// The incremental learner: initialization, the three-step updating
// procedure, the detection rule, and evaluation.
class Learner {
 public:
  Learner(const DatasetContainer& data, LearnerConfig cfg)
      : data_(&data), cfg_(std::move(cfg)), store_(cfg_.budget),
        rng_(hash_combine(cfg_.seed, 0x6c6561726e657221ULL)) {
    cfg_.net.validate();
    cfg_.loss.validate();
  }

  // Rebuilds a learner around restored state: model parameters, seen
  // architectures (in original order), and the exemplar sample ids per class.
  // Features and templates are recomputed with the restored extractor.
  static Learner restore(const DatasetContainer& data, LearnerConfig cfg,
                         ParameterSet<float> params, int64_t adam_step_count,
                         const std::vector<int>& architectures,
                         const std::vector<std::vector<int>>& exemplar_ids) {
    Learner l(data, std::move(cfg));
    for (int a : architectures) l.registry_.add_architecture(a);
    if (exemplar_ids.size() != size_t(l.registry_.size()))
      throw format_error("restore: exemplar class count does not match registry");
    params.set_step(adam_step_count);
    l.model_.config = l.cfg_.net;
    l.model_.params = std::move(params);
    l.model_.num_classes = l.registry_.size();
    for (int c = 0; c < l.registry_.size(); ++c) {
      l.store_.add_class();
      std::vector<ExemplarStore::Exemplar> ex;
      for (int id : exemplar_ids[size_t(c)]) ex.push_back({id, {}});
      l.store_.set_exemplars(c, std::move(ex));
    }
    l.steps_ = int(architectures.size());
    l.refresh_templates();
    return l;
  }

  bool initialized() const { return steps_ > 0; }
  int steps_completed() const { return steps_; }
  const ModelState& model() const { return model_; }
  const ClassRegistry& registry() const { return registry_; }
  const ExemplarStore& store() const { return store_; }
  const LearnerConfig& config() const { return cfg_; }
  const DatasetContainer& data() const { return *data_; }
  bool nme_available() const { return !store_.templates().empty(); }

  // Joint training on the first s architectures; no distillation exists yet.
  StepReport initialize(const std::vector<int>& architectures) {
    if (initialized()) throw usage_error("learner already initialized");
    if (architectures.empty()) throw config_error("initialize: need at least one architecture");
    for (int a : architectures) registry_.add_architecture(a);
    model_ = ModelState::init(cfg_.net, registry_.size(), rng_);
    for (int c = 0; c < registry_.size(); ++c) store_.add_class();

    auto pool = collect_items(architectures, Split::train);
    if (pool.empty()) throw config_error("initialize: empty training set");
    auto val = collect_items(architectures, Split::val);
    StepReport report = train_epochs(pool, val, /*snapshot=*/nullptr, /*old_ls=*/{});
    report.step = ++steps_;
    std::vector<int> all_classes(size_t(registry_.size()));
    for (int c = 0; c < registry_.size(); ++c) all_classes[size_t(c)] = c;
    rebuild_memory(all_classes);
    return report;
  }

  // One increment: snapshot, head growth by two classes, fine-tuning on the
  // new data plus the exemplar set, then exemplar bookkeeping.
  StepReport increment(int architecture) {
    if (!initialized()) throw usage_error("increment before initialize");
    ModelSnapshot snap = snapshot(model_);
    int first_new = registry_.add_architecture(architecture);
    model_.expand_head(2);
    store_.add_class();
    store_.add_class();

    auto old_ls = exemplar_old_log_softmax(snap);
    auto pool = collect_items({architecture}, Split::train);
    if (pool.empty()) throw config_error("increment: empty training set");
    append_exemplar_items(pool);
    auto val = collect_items({architecture}, Split::val);

    StepReport report = train_epochs(pool, val, &snap, old_ls);
    report.step = ++steps_;
    rebuild_memory({first_new, first_new + 1});
    return report;
  }

  // Minimum-distance rule over class templates, falling back to the head
  // argmax when there are no exemplars (M = 0).
  Origin detect(const TensorValue& image) const {
    TensorValue batch({1, image.dim(0), image.dim(1), image.dim(2)},
                      std::vector<float>(image.data));
    return registry_.origin_of(predict_classes(batch)[0]);
  }

  bool detect_aux(const TensorValue& image) const {
    TensorValue batch({1, image.dim(0), image.dim(1), image.dim(2)},
                      std::vector<float>(image.data));
    return detector_score(model_, batch)[0] >= 0.5f;
  }

  // Detection/classification metrics over the test splits of all seen
  // architectures.
  MetricsReport evaluate() const {
    if (!initialized()) throw usage_error("evaluate before initialize");
    MetricsReport rep;
    rep.arch_order = registry_.architectures();
    size_t n_arch = rep.arch_order.size();
    rep.confusion.assign(n_arch, std::vector<int>(n_arch, 0));

    int64_t det_hits = 0, det_total = 0, cls_hits = 0, cls_total = 0;
    int64_t aux_hits = 0;
    std::vector<int64_t> arch_hits(n_arch, 0), arch_total(n_arch, 0);

    for (size_t ai = 0; ai < n_arch; ++ai) {
      int arch = rep.arch_order[ai];
      for (Origin origin : {Origin::gan, Origin::real}) {
        const auto& ids = data_->indices(arch, origin, Split::test);
        for (size_t pos = 0; pos < ids.size(); pos += size_t(cfg_.train.batch_size)) {
          size_t end = std::min(ids.size(), pos + size_t(cfg_.train.batch_size));
          std::vector<int> chunk(ids.begin() + long(pos), ids.begin() + long(end));
          TensorValue batch = data_->make_batch(chunk);
          auto preds = predict_classes(batch);
          std::vector<float> aux;
          if (cfg_.net.variant == Variant::mt_mc)
            aux = detector_score(model_, batch).data;
          for (size_t i = 0; i < preds.size(); ++i) {
            int pred = preds[i];
            bool gan_pred = registry_.origin_of(pred) == Origin::gan;
            bool correct = gan_pred == (origin == Origin::gan);
            det_hits += correct;
            arch_hits[ai] += correct;
            ++det_total;
            ++arch_total[ai];
            if (!aux.empty()) aux_hits += (aux[i] >= 0.5f) == (origin == Origin::gan);
            if (origin == Origin::gan) {
              int pred_arch = registry_.architecture_of(pred);
              auto it = std::find(rep.arch_order.begin(), rep.arch_order.end(), pred_arch);
              size_t pi = size_t(it - rep.arch_order.begin());
              rep.confusion[ai][pi] += 1;
              cls_hits += pred_arch == arch;
              ++cls_total;
            }
          }
        }
      }
    }
    rep.detection_acc = det_total ? double(det_hits) / double(det_total) : 0.0;
    rep.classification_acc = cls_total ? double(cls_hits) / double(cls_total) : 0.0;
    for (size_t ai = 0; ai < n_arch; ++ai)
      rep.per_arch_detection.emplace_back(
          rep.arch_order[ai], arch_total[ai] ? double(arch_hits[ai]) / double(arch_total[ai]) : 0.0);
    if (cfg_.net.variant == Variant::mt_mc)
      rep.aux_detector_acc = det_total ? double(aux_hits) / double(det_total) : 0.0;
    return rep;
  }

  // Budget bookkeeping checked after every step by the harness.
  void check_store_invariants() const {
    std::vector<int64_t> available;
    for (int c = 0; c < registry_.size(); ++c) {
      int arch = registry_.architecture_of(c);
      Origin o = registry_.origin_of(c);
      available.push_back(int64_t(data_->indices(arch, o, Split::train).size()));
    }
    int64_t min_avail = available.empty() ? 0 : *std::min_element(available.begin(), available.end());
    store_.check_invariants(min_avail);
  }

 private:
  struct Item {
    int sample_id = -1;
    int class_id = -1;
    Origin origin = Origin::real;
    int exemplar_slot = -1;  // row in the old-logits cache; -1 for new data
  };

  std::vector<Item> collect_items(const std::vector<int>& archs, Split split) const {
    std::vector<Item> out;
    for (int arch : archs)
      for (Origin origin : {Origin::gan, Origin::real}) {
        int class_id = registry_.class_of(arch, origin);
        for (int id : data_->indices(arch, origin, split))
          out.push_back(Item{id, class_id, origin, -1});
      }
    return out;
  }

  void append_exemplar_items(std::vector<Item>& pool) const {
    int slot = 0;
    for (int c = 0; c < store_.num_classes(); ++c)
      for (const auto& ex : store_.exemplars(c))
        pool.push_back(Item{ex.sample_index, c, registry_.origin_of(c), slot++});
  }

  int exemplar_count() const { return int(store_.total_stored()); }

  // log softmax(old_logits / T) for every stored exemplar, computed once per
  // increment from the frozen snapshot.
  TensorValue exemplar_old_log_softmax(const ModelSnapshot& snap) const {
    int n = exemplar_count();
    if (n == 0) return TensorValue({0, snap.num_classes});
    TensorValue out({n, snap.num_classes});
    std::vector<Item> items;
    items.reserve(size_t(n));
    {
      std::vector<Item> tmp;
      append_exemplar_items(tmp);
      items = std::move(tmp);
    }
    const int bs = cfg_.train.batch_size;
    for (size_t pos = 0; pos < items.size(); pos += size_t(bs)) {
      size_t end = std::min(items.size(), pos + size_t(bs));
      std::vector<int> chunk;
      for (size_t i = pos; i < end; ++i) chunk.push_back(items[i].sample_id);
      auto sb = class_scores(snap, data_->make_batch(chunk));
      for (size_t i = pos; i < end; ++i) {
        std::vector<double> row(size_t(snap.num_classes));
        for (int j = 0; j < snap.num_classes; ++j)
          row[size_t(j)] = sb.logits.at2(int64_t(i - pos), j);
        auto p = tempered_softmax(row, cfg_.loss.temperature);
        for (int j = 0; j < snap.num_classes; ++j)
          out.at2(items[i].exemplar_slot, j) = float(std::log(p[size_t(j)]));
      }
    }
    return out;
  }

  struct TermSums {
    double class_sum = 0;
    int64_t class_n = 0;
    double distill_sum = 0;
    int64_t distill_n = 0;
    double binary_sum = 0;  // detector BCE (mt_mc) or group term (mt_sc)
    int64_t binary_n = 0;
  };

  // Builds the variant loss for one batch on the given graph. Returns the
  // scalar Var; per-term batch sums are accumulated into `sums` when given.
  Var batch_loss(Graph<float>& g, const BoundModel<float>& m,
                 const std::vector<Item>& batch, const ModelSnapshot* snap,
                 const TensorValue& old_ls, TermSums* sums) const {
    std::vector<int> ids(batch.size());
    std::vector<int> labels(batch.size());
    std::vector<Origin> origins(batch.size());
    std::vector<int> rows_new, rows_ex, rows_all(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) {
      ids[i] = batch[i].sample_id;
      labels[i] = batch[i].class_id;
      origins[i] = batch[i].origin;
      rows_all[i] = int(i);
      (batch[i].exemplar_slot < 0 ? rows_new : rows_ex).push_back(int(i));
    }
    Var input = g.constant(data_->make_batch(ids));
    Var feats = m.features(input);
    Var logits = m.logits(feats);
    Var scores = g.sigmoid(logits);

    const Variant variant = cfg_.net.variant;
    const double gamma = snap ? cfg_.loss.gamma : 0.0;  // no distillation before the first increment
    const double lambda = cfg_.loss.lambda;

    Var class_term = classification_loss_graph(g, scores, labels, rows_new);
    Var loss = g.axpb(class_term, variant == Variant::finetune ? 1.0 : 1.0 - gamma, 0.0);

    Var distill_term{};
    if (snap && variant != Variant::finetune && !rows_ex.empty()) {
      TensorValue batch_old_ls({int64_t(batch.size()), int64_t(snap->num_classes)});
      for (int r : rows_ex)
        for (int j = 0; j < snap->num_classes; ++j)
          batch_old_ls.at2(r, j) = old_ls.at2(batch[size_t(r)].exemplar_slot, j);
      Var sliced = g.slice_cols(logits, snap->num_classes);
      distill_term =
          distillation_loss_graph(g, sliced, batch_old_ls, cfg_.loss.temperature, rows_ex);
      loss = g.add(loss, g.axpb(distill_term, gamma, 0.0));
    }

    Var binary_term{};
    if (variant == Variant::mt_mc && !rows_new.empty()) {
      Var d = g.sigmoid(m.detector_logits(feats));
      binary_term = detector_bce_graph(g, d, origins, rows_new);
      loss = g.add(loss, g.axpb(binary_term, lambda, 0.0));
    } else if (variant == Variant::mt_sc) {
      binary_term = group_binary_loss_graph(g, scores, origins,
                                            registry_.classes_with_origin(Origin::gan),
                                            registry_.classes_with_origin(Origin::real), rows_all);
      loss = g.add(loss, g.axpb(binary_term, lambda, 0.0));
    }

    if (sums) {
      sums->class_sum += double(g.value(class_term).data[0]) * double(rows_new.size());
      sums->class_n += int64_t(rows_new.size());
      if (distill_term.valid()) {
        sums->distill_sum += double(g.value(distill_term).data[0]) * double(rows_ex.size());
        sums->distill_n += int64_t(rows_ex.size());
      }
      if (binary_term.valid()) {
        int64_t n = variant == Variant::mt_mc ? int64_t(rows_new.size()) : int64_t(rows_all.size());
        sums->binary_sum += double(g.value(binary_term).data[0]) * double(n);
        sums->binary_n += n;
      }
    }
    return loss;
  }

  // The variant's full objective on the new-task validation split, with the
  // distillation (and, for mt_sc, the group) term over the fixed exemplars.
  double validation_objective(const std::vector<Item>& val, const ModelSnapshot* snap,
                              const TensorValue& old_ls) const {
    TermSums sums;
    std::vector<Item> exemplars;
    append_exemplar_items(exemplars);
    auto run = [&](const std::vector<Item>& items) {
      const size_t bs = size_t(cfg_.train.batch_size);
      for (size_t pos = 0; pos < items.size(); pos += bs) {
        std::vector<Item> chunk(items.begin() + long(pos),
                                items.begin() + long(std::min(items.size(), pos + bs)));
        Graph<float> g(false);
        auto m = BoundModel<float>::bind(g, model_, false);
        batch_loss(g, m, chunk, snap, old_ls, &sums);
      }
    };
    run(val);
    if (snap && cfg_.net.variant != Variant::finetune && !exemplars.empty()) run(exemplars);

    const Variant variant = cfg_.net.variant;
    const double gamma = snap ? cfg_.loss.gamma : 0.0;
    double class_mean = sums.class_n ? sums.class_sum / double(sums.class_n) : 0.0;
    if (variant == Variant::finetune) return class_mean;
    double obj = (1.0 - gamma) * class_mean;
    if (sums.distill_n) obj += gamma * sums.distill_sum / double(sums.distill_n);
    if (sums.binary_n) obj += cfg_.loss.lambda * sums.binary_sum / double(sums.binary_n);
    return obj;
  }

  StepReport train_epochs(std::vector<Item>& pool, const std::vector<Item>& val,
                          const ModelSnapshot* snap, const TensorValue& old_ls) {
    StepReport report;
    EarlyStopper stopper(cfg_.train.patience, cfg_.train.min_improvement);
    std::optional<ParameterSet<float>> best;
    const AdamConfig adam{cfg_.train.lr, 0.9, 0.999, 1e-8};

    for (int epoch = 0; epoch < cfg_.train.max_epochs; ++epoch) {
      rng_.shuffle(pool);
      double epoch_loss = 0;
      int64_t batches = 0;
      const size_t bs = size_t(cfg_.train.batch_size);
      for (size_t pos = 0; pos < pool.size(); pos += bs) {
        std::vector<Item> chunk(pool.begin() + long(pos),
                                pool.begin() + long(std::min(pool.size(), pos + bs)));
        Graph<float> g(true);
        auto m = BoundModel<float>::bind(g, model_, true);
        Var loss = batch_loss(g, m, chunk, snap, old_ls, nullptr);
        double lv = double(g.value(loss).data[0]);
        if (!std::isfinite(lv))
          throw std::runtime_error("non-finite training loss at step " +
                                   std::to_string(steps_ + 1) + ", epoch " +
                                   std::to_string(epoch) + ", batch " + std::to_string(batches));
        g.backward(loss);
        auto grads = m.collect_grads();
        clip_global_norm(grads, cfg_.train.grad_clip);
        adam_step(model_.params, grads, adam);
        epoch_loss += lv;
        ++batches;
      }
      report.train_losses.push_back(batches ? epoch_loss / double(batches) : 0.0);
      double vloss = validation_objective(val, snap, old_ls);
      report.val_losses.push_back(vloss);
      if (stopper.observe(vloss)) best = model_.params;
      ++report.epochs_run;
      if (stopper.should_stop()) {
        report.stop_reason = "patience";
        break;
      }
    }
    if (report.stop_reason.empty()) report.stop_reason = "max_epochs";
    if (best) model_.params = std::move(*best);
    return report;
  }

  // Features for arbitrary dataset samples with the current model.
  std::vector<std::vector<float>> features_of(const std::vector<int>& sample_ids) const {
    std::vector<std::vector<float>> out;
    out.reserve(sample_ids.size());
    const size_t bs = size_t(cfg_.train.batch_size);
    for (size_t pos = 0; pos < sample_ids.size(); pos += bs) {
      std::vector<int> chunk(sample_ids.begin() + long(pos),
                             sample_ids.begin() + long(std::min(sample_ids.size(), pos + bs)));
      TensorValue feats = extract_features(model_, data_->make_batch(chunk));
      int64_t d = feats.dim(1);
      for (int64_t i = 0; i < feats.dim(0); ++i)
        out.emplace_back(feats.data.begin() + i * d, feats.data.begin() + (i + 1) * d);
    }
    return out;
  }

  // Steps 2 and 3 of the updating procedure plus template recomputation,
  // also used after initialization.
  void rebuild_memory(const std::vector<int>& new_classes) {
    store_.invalidate_features();
    int64_t quota = store_.budget().quota(registry_.size());

    // refresh cached features of retained exemplars with the current model
    refresh_exemplar_features();

    // create exemplar sets for new classes from their full training sets
    for (int c : new_classes) {
      if (quota == 0) break;
      int arch = registry_.architecture_of(c);
      Origin origin = registry_.origin_of(c);
      const auto& ids = data_->indices(arch, origin, Split::train);
      auto feats = features_of(ids);
      auto selected = select_exemplars(feats, quota);
      std::sort(selected.begin(), selected.end());  // store in sample order
      std::vector<ExemplarStore::Exemplar> ex;
      for (int i : selected)
        ex.push_back({ids[size_t(i)], feats[size_t(i)]});
      store_.set_exemplars(c, std::move(ex));
    }

    // reduce old classes to the new quota
    for (int c = 0; c < store_.num_classes(); ++c)
      if (std::find(new_classes.begin(), new_classes.end(), c) == new_classes.end())
        store_.reduce_class(c, quota);

    build_templates_from_cache();
  }

  // Restore path: recompute every cached feature, then the templates.
  void refresh_templates() {
    store_.invalidate_features();
    refresh_exemplar_features();
    build_templates_from_cache();
  }

  void refresh_exemplar_features() {
    for (int c = 0; c < store_.num_classes(); ++c) {
      auto& ex = store_.mutable_exemplars(c);
      if (ex.empty()) continue;
      std::vector<int> ids;
      for (const auto& e : ex) ids.push_back(e.sample_index);
      auto feats = features_of(ids);
      for (size_t i = 0; i < ex.size(); ++i) ex[i].feature = std::move(feats[i]);
    }
    store_.mark_cache_fresh();
  }

  void build_templates_from_cache() {
    if (store_.empty()) {
      store_.set_templates({});
      return;
    }
    std::vector<std::vector<double>> templates;
    for (int c = 0; c < store_.num_classes(); ++c) templates.push_back(store_.class_template(c));
    store_.set_templates(std::move(templates));
  }

  // NME predictions, or head-argmax when no exemplars exist.
  std::vector<int> predict_classes(const TensorValue& batch) const {
    std::vector<int> out;
    if (nme_available()) {
      TensorValue feats = extract_features(model_, batch);
      int64_t d = feats.dim(1);
      for (int64_t i = 0; i < feats.dim(0); ++i) {
        std::vector<float> row(feats.data.begin() + i * d, feats.data.begin() + (i + 1) * d);
        out.push_back(classify_nme(row, store_.templates()));
      }
      return out;
    }
    auto sb = class_scores(model_, batch);
    for (int64_t i = 0; i < sb.logits.dim(0); ++i) {
      int best = 0;
      for (int64_t y = 1; y < sb.logits.dim(1); ++y)
        if (sb.logits.at2(i, y) > sb.logits.at2(i, best)) best = int(y);
      out.push_back(best);
    }
    return out;
  }

  const DatasetContainer* data_;
  LearnerConfig cfg_;
  ClassRegistry registry_;
  ModelState model_;
  ExemplarStore store_;
  Rng rng_;
  int steps_ = 0;
};

}  // namespace ganinc
