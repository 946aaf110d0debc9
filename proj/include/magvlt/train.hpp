#pragma once
// Multitask masked-token training. A step samples one task (t2i / i2t /
// it2it), builds a masked batch, and optimizes a composite of up to four
// terms: masked-token NLL, caption-length NLL (skipped for t2i), an unrolled
// denoising NLL on self-corrupted inputs (skipped for it2it), and a
// selective-prediction NLL over mixed two-sample contexts. Each term gets its
// own tape; term weights are folded into the backward seed so gradients
// accumulate ready-scaled.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "magvlt/model.hpp"
#include "magvlt/ops.hpp"
#include "magvlt/optim.hpp"
#include "magvlt/rng.hpp"
#include "magvlt/schedule.hpp"
#include "magvlt/synth.hpp"
#include "magvlt/vocab.hpp"

namespace magvlt::train {

using mask::Task;

struct TaskWeights {
    double t2i = 8, i2t = 1, it2it = 1;

    void validate() const {
        if (t2i < 0 || i2t < 0 || it2it < 0 || t2i + i2t + it2it <= 0)
            throw std::invalid_argument("task weights must be non-negative with positive sum");
    }
};

// One uniform draw against the cumulative weights, ordered t2i, i2t, it2it.
inline Task sample_task(nd::Rng& rng, const TaskWeights& w) {
    w.validate();
    const double u = rng.uniform() * (w.t2i + w.i2t + w.it2it);
    if (u < w.t2i) return Task::t2i;
    if (u < w.t2i + w.i2t) return Task::i2t;
    return Task::it2it;
}

struct PreparedSample {
    tok::GridImage image;
    std::vector<int> image_ids;
    tok::EncodedText text;
};

inline PreparedSample prepare_sample(const tok::Vocabulary& v, const synth::Sample& s) {
    return {s.image, tok::encode_image(s.image), tok::encode_text(v, s.caption)};
}

// A batch with masks applied. `rows` are flattened (b * seq_len + pos)
// indices of the masked slots, `targets` the tokens that were there.
struct MaskedBatch {
    Task task = Task::t2i;
    int batch = 0;
    std::vector<int> input_ids, orig_ids;
    std::vector<int> rows, targets;
    std::vector<int> bot_rows;       // one per sequence
    std::vector<int> length_class;   // caption length - 1
    std::vector<int> text_len;       // true caption lengths
    std::vector<mask::MaskPlan> plans;
};

inline MaskedBatch build_masked_batch(nd::Rng& rng, const tok::Vocabulary& v,
                                      const tok::Layout& lay,
                                      const std::vector<PreparedSample>& samples, Task task) {
    if (samples.empty()) throw std::invalid_argument("build_masked_batch: empty batch");
    const int S = lay.seq_len(), NI = lay.n_image();
    MaskedBatch mb;
    mb.task = task;
    mb.batch = int(samples.size());
    for (int b = 0; b < mb.batch; ++b) {
        const auto& ps = samples[size_t(b)];
        auto seq = tok::build_sequence(v, lay, ps.image_ids, ps.text.ids, v.none(), v.none());
        mb.orig_ids.insert(mb.orig_ids.end(), seq.ids.begin(), seq.ids.end());
        auto plan = mask::sample_training_mask(rng, task, NI, ps.text.length);
        for (int p : plan.image_positions) {
            const int pos = lay.image_pos(p);
            mb.rows.push_back(b * S + pos);
            mb.targets.push_back(seq.ids[size_t(pos)]);
            seq.ids[size_t(pos)] = v.mask();
        }
        for (int q : plan.text_positions) {
            const int pos = lay.text_pos(q);
            mb.rows.push_back(b * S + pos);
            mb.targets.push_back(seq.ids[size_t(pos)]);
            seq.ids[size_t(pos)] = v.mask();
        }
        mb.input_ids.insert(mb.input_ids.end(), seq.ids.begin(), seq.ids.end());
        mb.bot_rows.push_back(b * S + lay.bot_pos());
        mb.length_class.push_back(ps.text.length - 1);
        mb.text_len.push_back(ps.text.length);
        mb.plans.push_back(std::move(plan));
    }
    return mb;
}

// Mean over the batch of the summed NLL at masked positions.
template <class Real>
nd::Tensor<Real> mask_loss(nd::Tape<Real>* tape, net::Model<Real>& model, const MaskedBatch& mb,
                           Task task, double smoothing) {
    if (task != mb.task)
        throw std::invalid_argument("mask_loss: batch was built for task " +
                                    std::string(mask::task_name(mb.task)));
    auto out = model.forward(tape, mb.input_ids, mb.batch);
    auto ce = nd::ce_smoothed_rows(tape, out.logits, mb.rows, mb.targets, Real(smoothing));
    return nd::scale(tape, ce, Real(1.0 / mb.batch));
}

// Mean NLL of the caption length read off the BOT hidden state. Only defined
// for tasks that keep the text side supervised.
template <class Real>
nd::Tensor<Real> length_loss(nd::Tape<Real>* tape, net::Model<Real>& model,
                             const MaskedBatch& mb) {
    if (mb.task == Task::t2i)
        throw std::invalid_argument("length_loss: not defined for the t2i task");
    auto out = model.forward(tape, mb.input_ids, mb.batch);
    auto logits = model.length_logits(tape, out.hidden, mb.bot_rows);
    std::vector<int> rows(static_cast<size_t>(mb.batch), 0);
    for (int b = 0; b < mb.batch; ++b) rows[size_t(b)] = b;
    auto ce = nd::ce_smoothed_rows(tape, logits, rows, mb.length_class, Real(0));
    return nd::scale(tape, ce, Real(1.0 / mb.batch));
}

// Inputs for the unrolled pass: predictions sampled at the first-pass masked
// slots (temperature 1, no gradient), a fresh reduced-ratio re-mask on top.
struct UnrollBatch {
    int batch = 0;
    std::vector<int> first_ids;     // first-pass masked input
    std::vector<int> unrolled_ids;  // masks replaced by sampled tokens
    std::vector<int> input_ids;     // unrolled with the re-mask applied
    std::vector<int> rows, targets; // supervision at re-masked slots
    std::vector<int> remask_count, first_count;  // per sample
};

namespace detail {

// Sample one token from softmax(logits_row / 1) restricted to [lo, hi).
template <class Real>
int sample_restricted(const nd::Tensor<Real>& logits, int row, int lo, int hi, double u) {
    const Real* lr = logits.ptr() + int64_t(row) * logits.shape[1];
    double mx = -1e300;
    for (int t = lo; t < hi; ++t) mx = std::max(mx, double(lr[t]));
    double z = 0;
    for (int t = lo; t < hi; ++t) z += std::exp(double(lr[t]) - mx);
    double acc = 0;
    const double cut = u * z;
    for (int t = lo; t < hi; ++t) {
        acc += std::exp(double(lr[t]) - mx);
        if (acc >= cut) return t;
    }
    return hi - 1;
}

}  // namespace detail

// RNG order: plans for every sample (when not shared), then fills for every
// sample, then re-mask draws for every sample.
template <class Real>
UnrollBatch build_unroll_batch(nd::Rng& rng, net::Model<Real>& model, const tok::Vocabulary& v,
                               const tok::Layout& lay, const std::vector<PreparedSample>& samples,
                               const MaskedBatch& mb, bool shared_plan) {
    if (mb.task == Task::it2it)
        throw std::invalid_argument("unroll loss: not defined for the it2it task");
    const bool image_side = (mb.task == Task::t2i);
    const int S = lay.seq_len(), NI = lay.n_image();
    const auto kind = image_side ? mask::ScheduleKind::cosine : mask::ScheduleKind::linear;

    UnrollBatch ub;
    ub.batch = mb.batch;
    std::vector<mask::MaskPlan> plans;
    if (shared_plan) {
        plans = mb.plans;
    } else {
        for (int b = 0; b < mb.batch; ++b)
            plans.push_back(mask::sample_training_mask(rng, mb.task, NI,
                                                       samples[size_t(b)].text.length));
    }

    ub.first_ids = mb.orig_ids;
    for (int b = 0; b < mb.batch; ++b) {
        const auto& plan = plans[size_t(b)];
        for (int p : plan.image_positions) ub.first_ids[size_t(b * S + lay.image_pos(p))] = v.mask();
        for (int q : plan.text_positions) ub.first_ids[size_t(b * S + lay.text_pos(q))] = v.mask();
    }

    auto out = model.forward(nullptr, ub.first_ids, mb.batch);  // no gradient flows back here
    ub.unrolled_ids = mb.orig_ids;
    const int lo = image_side ? v.image_begin() : v.word_begin();
    const int hi = image_side ? v.image_end() : v.word_end();
    for (int b = 0; b < mb.batch; ++b) {
        const auto& plan = plans[size_t(b)];
        const auto& mod = image_side ? plan.image_positions : plan.text_positions;
        for (int m : mod) {
            const int pos = image_side ? lay.image_pos(m) : lay.text_pos(m);
            ub.unrolled_ids[size_t(b * S + pos)] =
                detail::sample_restricted(out.logits, b * S + pos, lo, hi, rng.uniform());
        }
    }

    ub.input_ids = ub.unrolled_ids;
    for (int b = 0; b < mb.batch; ++b) {
        const auto& plan = plans[size_t(b)];
        const int n_mod = image_side ? NI : samples[size_t(b)].text.length;
        const double r_prev = image_side ? plan.ratio_image : plan.ratio_text;
        const int count_prev =
            int((image_side ? plan.image_positions : plan.text_positions).size());
        auto draw = mask::unroll_remask(rng, r_prev, kind, n_mod, count_prev);
        for (int m : draw.positions) {
            const int pos = image_side ? lay.image_pos(m) : lay.text_pos(m);
            ub.rows.push_back(b * S + pos);
            ub.targets.push_back(mb.orig_ids[size_t(b * S + pos)]);
            ub.input_ids[size_t(b * S + pos)] = v.mask();
        }
        ub.remask_count.push_back(int(draw.positions.size()));
        ub.first_count.push_back(count_prev);
    }
    return ub;
}

template <class Real>
nd::Tensor<Real> unroll_loss(nd::Tape<Real>* tape, net::Model<Real>& model,
                             const UnrollBatch& ub, double smoothing) {
    auto out = model.forward(tape, ub.input_ids, ub.batch);
    auto ce = nd::ce_smoothed_rows(tape, out.logits, ub.rows, ub.targets, Real(smoothing));
    return nd::scale(tape, ce, Real(1.0 / ub.batch));
}

// Mixed-context selective prediction. Samples are paired 2-by-2 after an
// in-place shuffle; each pair contributes one sequence whose context mixes
// the two sources and whose targets come from the selected source only.
struct MixselBatch {
    Task task = Task::t2i;
    int batch = 0;                  // number of constructed sequences (pairs)
    std::vector<int> input_ids;
    std::vector<int> rows, targets;
    std::vector<int> chosen;        // selected pair member, 0 or 1
    std::vector<int> axis;          // image mix axis, -1 when no image mixing
    std::vector<int> pair_a, pair_b;  // source sample indices after shuffling
};

// RNG order per pair: axis (i2t / it2it only), selection, then the mask plan.
// The shuffle (one below() per Fisher-Yates step, high to low) comes first.
inline void mixsel_context_draws(nd::Rng& rng, Task task, int& axis, int& chosen) {
    axis = (task == Task::i2t || task == Task::it2it) ? int(rng.below(2)) : -1;
    chosen = int(rng.below(2));
}

inline MixselBatch build_mixsel_batch(nd::Rng& rng, const tok::Vocabulary& v,
                                      const tok::Layout& lay,
                                      const std::vector<PreparedSample>& samples, Task task) {
    const int B = int(samples.size());
    if (B == 0 || B % 2 != 0)
        throw std::invalid_argument("mixsel: batch size must be even, got " + std::to_string(B));
    const int S = lay.seq_len(), NI = lay.n_image();

    std::vector<int> perm(static_cast<size_t>(B), 0);
    for (int i = 0; i < B; ++i) perm[size_t(i)] = i;
    for (int i = B - 1; i > 0; --i) {
        const int j = int(rng.below(i + 1));
        std::swap(perm[size_t(i)], perm[size_t(j)]);
    }

    MixselBatch out;
    out.task = task;
    out.batch = B / 2;
    for (int k = 0; k < B / 2; ++k) {
        const auto& a = samples[size_t(perm[size_t(2 * k)])];
        const auto& b = samples[size_t(perm[size_t(2 * k + 1)])];
        int axis = -1, chosen = 0;
        mixsel_context_draws(rng, task, axis, chosen);
        const auto& sel = chosen == 0 ? a : b;

        auto sel_i_token = [&](int ax, int ch) {
            return ax == 0 ? (ch == 0 ? v.left() : v.right()) : (ch == 0 ? v.top() : v.bottom());
        };

        std::vector<int> image_ctx, text_ctx;
        int sel_i = v.none(), sel_t = v.none();
        synth::MixedText mt;
        if (task == Task::i2t) {
            image_ctx = tok::encode_image(synth::mix_images(a.image, b.image, axis));
            text_ctx = sel.text.ids;
            sel_i = sel_i_token(axis, chosen);
        } else if (task == Task::t2i) {
            mt = synth::mix_texts(v, a.text, b.text);
            text_ctx = mt.ids;
            image_ctx = sel.image_ids;
            sel_t = chosen == 0 ? v.left() : v.right();
        } else {
            image_ctx = tok::encode_image(synth::mix_images(a.image, b.image, axis));
            mt = synth::mix_texts(v, a.text, b.text);
            text_ctx = mt.ids;
            sel_i = sel_i_token(axis, chosen);
            sel_t = chosen == 0 ? v.left() : v.right();
        }

        auto seq = tok::build_sequence(v, lay, image_ctx, text_ctx, sel_i, sel_t);
        const int n_text_maskable = task == Task::i2t   ? sel.text.length
                                    : task == Task::t2i ? 0
                                                        : mt.seg_len[chosen];
        auto plan = mask::sample_training_mask(rng, task, NI, n_text_maskable);
        for (int p : plan.image_positions) {
            const int pos = lay.image_pos(p);
            // it2it predicts the selected source's cell under a mixed context
            const int target = task == Task::it2it ? sel.image_ids[size_t(p)]
                                                   : seq.ids[size_t(pos)];
            out.rows.push_back(k * S + pos);
            out.targets.push_back(target);
            seq.ids[size_t(pos)] = v.mask();
        }
        for (int q : plan.text_positions) {
            const int slot = task == Task::it2it ? mt.seg_begin[chosen] + q : q;
            const int pos = lay.text_pos(slot);
            out.rows.push_back(k * S + pos);
            out.targets.push_back(seq.ids[size_t(pos)]);
            seq.ids[size_t(pos)] = v.mask();
        }
        out.input_ids.insert(out.input_ids.end(), seq.ids.begin(), seq.ids.end());
        out.chosen.push_back(chosen);
        out.axis.push_back(axis);
        out.pair_a.push_back(perm[size_t(2 * k)]);
        out.pair_b.push_back(perm[size_t(2 * k + 1)]);
    }
    return out;
}

template <class Real>
nd::Tensor<Real> mixsel_loss(nd::Tape<Real>* tape, net::Model<Real>& model,
                             const MixselBatch& msb, double smoothing) {
    auto out = model.forward(tape, msb.input_ids, msb.batch);
    auto ce = nd::ce_smoothed_rows(tape, out.logits, msb.rows, msb.targets, Real(smoothing));
    return nd::scale(tape, ce, Real(1.0 / msb.batch));
}

// Next-token NLL for the causal baseline. Supervises modality slots only
// (structural specials carry no loss); PAD targets are excluded. The
// generation modality is whichever comes second in the layout.
template <class Real>
nd::Tensor<Real> ar_loss(nd::Tape<Real>* tape, net::Model<Real>& model, const tok::Vocabulary& v,
                         const tok::Layout& lay, const std::vector<PreparedSample>& samples,
                         double w_gen, double w_cond, double smoothing) {
    if (!model.cfg.causal)
        throw std::invalid_argument("ar_loss: needs a causal model");
    if (samples.empty()) throw std::invalid_argument("ar_loss: empty batch");
    const int S = lay.seq_len();
    const int B = int(samples.size());
    const bool gen_is_text = lay.order == tok::Order::image_first;

    std::vector<int> ids;
    std::vector<int> rows_gen, tgt_gen, rows_cond, tgt_cond;
    for (int b = 0; b < B; ++b) {
        const auto& ps = samples[size_t(b)];
        auto seq = tok::build_sequence(v, lay, ps.image_ids, ps.text.ids, v.none(), v.none());
        for (int p = 0; p + 1 < S; ++p) {
            const int q = p + 1;
            const auto kind = lay.kind(q);
            if (kind == tok::PosKind::special) continue;
            const int target = seq.ids[size_t(q)];
            if (target == v.pad()) continue;
            const bool gen = (kind == tok::PosKind::text) == gen_is_text;
            (gen ? rows_gen : rows_cond).push_back(b * S + p);
            (gen ? tgt_gen : tgt_cond).push_back(target);
        }
        ids.insert(ids.end(), seq.ids.begin(), seq.ids.end());
    }

    auto out = model.forward(tape, ids, B);
    auto g = nd::ce_smoothed_rows(tape, out.logits, rows_gen, tgt_gen, Real(smoothing));
    auto c = nd::ce_smoothed_rows(tape, out.logits, rows_cond, tgt_cond, Real(smoothing));
    auto total = nd::add(tape, nd::scale(tape, g, Real(w_gen)), nd::scale(tape, c, Real(w_cond)));
    return nd::scale(tape, total, Real(1.0 / B));
}

struct LossReport {
    std::string task;
    double mask = 0, length = 0, unroll = 0, mixsel = 0, total = 0;
    bool has_length = false, has_unroll = false, has_mixsel = false;
    bool skipped = false;
    double grad_norm = 0, lr = 0;
    int64_t step = -1;
    double wall_ms = 0;
};

struct TrainerConfig {
    int batch_size = 64;
    int64_t total_steps = 20000;
    double base_lr = 3e-4;
    int64_t warmup_steps = 400;
    double lr_floor = 0.0;
    double clip_norm = 4.0;
    double label_smoothing = 0.1;
    double lambda_tl = 0.01, lambda_um = 1.0, lambda_ms = 0.5;
    TaskWeights weights;
    bool unroll_shared_plan = false;
    double ar_w_gen = 0.9, ar_w_cond = 0.1;
    int64_t checkpoint_every = 1000;
    nd::AdamWConfig adamw;

    void validate() const {
        if (batch_size < 1) throw std::invalid_argument("trainer config: batch_size < 1");
        if (total_steps < 1) throw std::invalid_argument("trainer config: total_steps < 1");
        if (clip_norm <= 0) throw std::invalid_argument("trainer config: clip_norm <= 0");
        if (lambda_tl < 0 || lambda_um < 0 || lambda_ms < 0)
            throw std::invalid_argument("trainer config: negative loss weight");
        weights.validate();
    }
};

inline std::string fmt_g(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}

template <class Real>
class Trainer {
  public:
    enum class Mode { masked, ar_i2t, ar_t2i };

    Trainer(net::Model<Real> model, TrainerConfig cfg, tok::Vocabulary vocab,
            std::vector<synth::Sample> data, uint64_t seed, Mode mode = Mode::masked)
        : model_(std::move(model)),
          cfg_(cfg),
          vocab_(vocab),
          mode_(mode),
          lay_{vocab.grid, vocab.text_len,
               mode == Mode::ar_t2i ? tok::Order::text_first : tok::Order::image_first},
          rng_(seed) {
        cfg_.validate();
        if (data.empty()) throw std::invalid_argument("trainer: no training data");
        if (mode_ != Mode::masked && !model_.cfg.causal)
            throw std::invalid_argument("trainer: autoregressive mode needs a causal model");
        if (mode_ == Mode::masked && model_.cfg.causal)
            throw std::invalid_argument("trainer: masked mode needs a bidirectional model");
        if (model_.cfg.seq_len != lay_.seq_len() || model_.cfg.vocab_size != vocab_.size() ||
            model_.cfg.n_text != vocab_.text_len)
            throw std::invalid_argument("trainer: model dims do not match the vocabulary layout");
        if (mode_ == Mode::masked && cfg_.lambda_ms > 0 && cfg_.batch_size % 2 != 0)
            throw std::invalid_argument("trainer: mixed-context pairing needs an even batch size");
        for (const auto& s : data) prepared_.push_back(prepare_sample(vocab_, s));
        params_ = model_.parameters();
        opt_ = nd::AdamW<Real>(params_, cfg_.adamw);
    }

    Trainer(const Trainer&) = delete;
    Trainer& operator=(const Trainer&) = delete;

    net::Model<Real>& model() { return model_; }
    const TrainerConfig& config() const { return cfg_; }
    int64_t step_index() const { return step_; }
    int64_t skipped_steps() const { return skipped_; }
    const tok::Layout& layout() const { return lay_; }

    // Draw order: task, batch indices, then the per-term draws in term order.
    LossReport step() {
        if (step_ >= cfg_.total_steps)
            throw std::logic_error("trainer: past the configured step horizon");
        const auto t0 = std::chrono::steady_clock::now();
        for (auto* p : params_) p->zero_grad();

        LossReport rep;
        rep.step = step_;
        if (mode_ == Mode::masked)
            masked_terms(rep);
        else
            ar_term(rep);

        if (!std::isfinite(rep.total)) {
            for (auto* p : params_) p->zero_grad();
            rep.skipped = true;
            ++skipped_;
        } else {
            rep.grad_norm = nd::clip_global_norm(params_, cfg_.clip_norm);
            rep.lr = nd::cosine_lr(step_ + 1, cfg_.total_steps, cfg_.base_lr, cfg_.warmup_steps,
                                   cfg_.lr_floor);
            if (opt_.step(params_, rep.lr) == nd::AdamW<Real>::Status::refused_nonfinite) {
                rep.skipped = true;
                ++skipped_;
            }
        }
        ++step_;
        rep.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                                t0)
                          .count();
        return rep;
    }

    void run(int64_t n_steps, const std::string& metrics_csv, const std::string& ckpt_prefix) {
        std::ofstream csv;
        if (!metrics_csv.empty()) {
            const bool fresh = !std::ifstream(metrics_csv).good();
            csv.open(metrics_csv, std::ios::app);
            if (!csv) throw std::runtime_error("cannot open metrics file '" + metrics_csv + "'");
            if (fresh)
                csv << "step,lr,task,mask,length,unroll,mixsel,total,grad_norm,skipped,wall_ms\n";
        }
        for (int64_t i = 0; i < n_steps; ++i) {
            LossReport r = step();
            if (csv) {
                csv << r.step << ',' << fmt_g(r.lr) << ',' << r.task << ',' << fmt_g(r.mask) << ','
                    << (r.has_length ? fmt_g(r.length) : std::string()) << ','
                    << (r.has_unroll ? fmt_g(r.unroll) : std::string()) << ','
                    << (r.has_mixsel ? fmt_g(r.mixsel) : std::string()) << ',' << fmt_g(r.total)
                    << ',' << fmt_g(r.grad_norm) << ',' << (r.skipped ? 1 : 0) << ','
                    << fmt_g(r.wall_ms) << '\n';
                csv.flush();
            }
            if (!ckpt_prefix.empty() &&
                (step_ % cfg_.checkpoint_every == 0 || i + 1 == n_steps))
                save(ckpt_prefix);
        }
    }

    void save(const std::string& prefix) {
        net::save_checkpoint(model_, prefix + ".model");
        std::ofstream os(prefix + ".opt", std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write optimizer state '" + prefix + ".opt'");
        opt_.save_state(os);
        nlohmann::json j = {{"step", step_},
                            {"skipped", skipped_},
                            {"mode", mode_name()},
                            {"rng", rng_.state_string()}};
        std::ofstream js(prefix + ".state.json", std::ios::trunc);
        if (!js) throw std::runtime_error("cannot write trainer state '" + prefix + ".state.json'");
        js << j.dump(2) << '\n';
    }

    void load(const std::string& prefix) {
        auto m = net::load_checkpoint<Real>(prefix + ".model");
        if (!(m.cfg == model_.cfg))
            throw std::runtime_error("trainer: checkpoint model config mismatch");
        auto src = m.parameters();
        for (size_t i = 0; i < params_.size(); ++i) *params_[i]->data = *src[i]->data;
        std::ifstream is(prefix + ".opt", std::ios::binary);
        if (!is) throw std::runtime_error("cannot open optimizer state '" + prefix + ".opt'");
        opt_.load_state(is);
        std::ifstream js(prefix + ".state.json");
        if (!js) throw std::runtime_error("cannot open trainer state '" + prefix + ".state.json'");
        nlohmann::json j = nlohmann::json::parse(js);
        if (j.at("mode").get<std::string>() != mode_name())
            throw std::runtime_error("trainer: checkpoint mode mismatch");
        step_ = j.at("step").get<int64_t>();
        skipped_ = j.at("skipped").get<int64_t>();
        rng_.set_state_string(j.at("rng").get<std::string>());
    }

  private:
    const char* mode_name() const {
        switch (mode_) {
            case Mode::masked: return "masked";
            case Mode::ar_i2t: return "ar_i2t";
            case Mode::ar_t2i: return "ar_t2i";
        }
        return "?";
    }

    std::vector<PreparedSample> draw_batch() {
        std::vector<PreparedSample> out;
        out.reserve(size_t(cfg_.batch_size));
        for (int i = 0; i < cfg_.batch_size; ++i)
            out.push_back(prepared_[rng_.below(int(prepared_.size()))]);
        return out;
    }

    void masked_terms(LossReport& rep) {
        const Task task = sample_task(rng_, cfg_.weights);
        rep.task = mask::task_name(task);
        auto batch = draw_batch();
        auto mb = build_masked_batch(rng_, vocab_, lay_, batch, task);

        {
            nd::Tape<Real> tape;
            auto loss = mask_loss(&tape, model_, mb, task, cfg_.label_smoothing);
            rep.mask = double(loss.item());
            tape.backward(loss);
        }
        rep.total = rep.mask;
        if (task != Task::t2i && cfg_.lambda_tl > 0) {
            nd::Tape<Real> tape;
            auto loss = length_loss(&tape, model_, mb);
            rep.length = double(loss.item());
            rep.has_length = true;
            tape.backward(loss, Real(cfg_.lambda_tl));
            rep.total += cfg_.lambda_tl * rep.length;
        }
        if (task != Task::it2it && cfg_.lambda_um > 0) {
            auto ub = build_unroll_batch(rng_, model_, vocab_, lay_, batch, mb,
                                         cfg_.unroll_shared_plan);
            nd::Tape<Real> tape;
            auto loss = unroll_loss(&tape, model_, ub, cfg_.label_smoothing);
            rep.unroll = double(loss.item());
            rep.has_unroll = true;
            tape.backward(loss, Real(cfg_.lambda_um));
            rep.total += cfg_.lambda_um * rep.unroll;
        }
        if (cfg_.lambda_ms > 0) {
            auto msb = build_mixsel_batch(rng_, vocab_, lay_, batch, task);
            nd::Tape<Real> tape;
            auto loss = mixsel_loss(&tape, model_, msb, cfg_.label_smoothing);
            rep.mixsel = double(loss.item());
            rep.has_mixsel = true;
            tape.backward(loss, Real(cfg_.lambda_ms));
            rep.total += cfg_.lambda_ms * rep.mixsel;
        }
    }

    void ar_term(LossReport& rep) {
        rep.task = mode_name();
        auto batch = draw_batch();
        nd::Tape<Real> tape;
        auto loss = ar_loss(&tape, model_, vocab_, lay_, batch, cfg_.ar_w_gen, cfg_.ar_w_cond,
                            cfg_.label_smoothing);
        rep.mask = double(loss.item());
        rep.total = rep.mask;
        tape.backward(loss);
    }

    net::Model<Real> model_;
    TrainerConfig cfg_;
    tok::Vocabulary vocab_;
    Mode mode_;
    tok::Layout lay_;
    nd::Rng rng_;
    std::vector<PreparedSample> prepared_;
    std::vector<nd::Tensor<Real>*> params_;
    nd::AdamW<Real> opt_;
    int64_t step_ = 0, skipped_ = 0;
};

}  // namespace magvlt::train
