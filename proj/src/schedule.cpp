#include "magvlt/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace magvlt::mask {

const char* task_name(Task t) {
    switch (t) {
        case Task::t2i: return "t2i";
        case Task::i2t: return "i2t";
        case Task::it2it: return "it2it";
    }
    throw std::logic_error("task_name: bad task");
}

Task task_from_name(const std::string& s) {
    if (s == "t2i") return Task::t2i;
    if (s == "i2t") return Task::i2t;
    if (s == "it2it") return Task::it2it;
    throw std::invalid_argument("unknown task '" + s + "'");
}

double schedule_value(ScheduleKind kind, double r) {
    if (!(r >= 0.0 && r <= 1.0))
        throw std::invalid_argument("schedule_value: r = " + std::to_string(r) +
                                    " outside [0,1]");
    if (r == 0.0) return 1.0;
    if (r == 1.0) return 0.0;
    switch (kind) {
        case ScheduleKind::cosine: return std::cos(1.5707963267948966 * r);
        case ScheduleKind::linear: return 1.0 - r;
    }
    throw std::logic_error("schedule_value: bad kind");
}

int masked_count(ScheduleKind kind, double r, int n) {
    if (n < 0) throw std::invalid_argument("masked_count: negative n");
    const double g = schedule_value(kind, r);
    const int c = int(std::ceil(g * double(n) - 1e-9));
    return std::max(0, std::min(n, c));
}

std::vector<int> choose_distinct(nd::Rng& rng, int n, int k) {
    if (k < 0 || k > n) throw std::invalid_argument("choose_distinct: k outside [0,n]");
    std::vector<int> idx(static_cast<size_t>(n), 0);
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < k; ++i) {
        const int j = i + rng.below(n - i);
        std::swap(idx[size_t(i)], idx[size_t(j)]);
    }
    idx.resize(size_t(k));
    std::sort(idx.begin(), idx.end());
    return idx;
}

MaskPlan sample_training_mask(nd::Rng& rng, Task task, int n_image, int n_text) {
    if (n_image < 0 || n_text < 0)
        throw std::invalid_argument("sample_training_mask: negative modality size");
    MaskPlan plan;
    plan.task = task;
    if (task != Task::i2t) {
        plan.ratio_image = rng.uniform();
        const int c = masked_count(ScheduleKind::cosine, plan.ratio_image, n_image);
        plan.image_positions = choose_distinct(rng, n_image, c);
    }
    if (task != Task::t2i) {
        plan.ratio_text = rng.uniform();
        const int c = masked_count(ScheduleKind::linear, plan.ratio_text, n_text);
        plan.text_positions = choose_distinct(rng, n_text, c);
    }
    return plan;
}

std::vector<int> select_decode_mask(const std::vector<double>& confidence,
                                    const std::vector<char>& candidate, ScheduleKind kind, int k,
                                    int K, int n_mod) {
    if (K <= 0 || k < 1 || k >= K)
        throw std::invalid_argument("select_decode_mask: step " + std::to_string(k) +
                                    " outside [1," + std::to_string(K - 1) + "]");
    if (int(confidence.size()) != n_mod || int(candidate.size()) != n_mod)
        throw std::invalid_argument("select_decode_mask: confidence/candidate size mismatch");
    std::vector<int> pool;
    for (int i = 0; i < n_mod; ++i)
        if (candidate[size_t(i)]) pool.push_back(i);
    const int want = masked_count(kind, double(k) / double(K), n_mod);
    const int count = std::min<int>(want, int(pool.size()));
    std::sort(pool.begin(), pool.end(), [&](int a, int b) {
        const double ca = confidence[size_t(a)], cb = confidence[size_t(b)];
        if (ca != cb) return ca < cb;
        return a < b;
    });
    pool.resize(size_t(count));
    std::sort(pool.begin(), pool.end());
    return pool;
}

RemaskDraw unroll_remask(nd::Rng& rng, double r_prev, ScheduleKind kind, int n_mod,
                         int count_prev) {
    if (!(r_prev >= 0.0 && r_prev < 1.0))
        throw std::invalid_argument("unroll_remask: r_prev outside [0,1)");
    if (count_prev < 0 || count_prev > n_mod)
        throw std::invalid_argument("unroll_remask: count_prev outside [0,n]");
    double u;
    do { u = rng.uniform(); } while (u == 0.0);
    RemaskDraw d;
    d.ratio = r_prev + (1.0 - r_prev) * u;
    int c = masked_count(kind, d.ratio, n_mod);
    c = std::min(c, std::max(0, count_prev - 1));
    d.positions = choose_distinct(rng, n_mod, c);
    return d;
}

}  // namespace magvlt::mask
