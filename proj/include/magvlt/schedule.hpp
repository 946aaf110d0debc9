#pragma once
#include <string>
#include <vector>

#include "magvlt/rng.hpp"

namespace magvlt::mask {

enum class ScheduleKind { cosine, linear };
enum class Task { t2i, i2t, it2it };

const char* task_name(Task t);
Task task_from_name(const std::string& s);

// gamma(r): cosine = cos(pi r / 2), linear = 1 - r. Endpoints are exact
// (gamma(0) == 1, gamma(1) == 0) so decode terminates bitwise.
double schedule_value(ScheduleKind kind, double r);

// ceil(gamma(r) * n) with a dust guard so exact-integer products coming out
// of floating point (e.g. (1 - 4/12) * 12 = 8 + 2e-15) do not round up.
int masked_count(ScheduleKind kind, double r, int n);

// k distinct values from [0,n), ascending
std::vector<int> choose_distinct(nd::Rng& rng, int n, int k);

struct MaskPlan {
    Task task = Task::t2i;
    double ratio_image = 0.0, ratio_text = 0.0;
    std::vector<int> image_positions, text_positions;  // modality-local, ascending
};

// Independent uniform ratios per modality; image uses the cosine schedule,
// text the linear one. n_text is the true caption length (PAD slots are
// never maskable). I2T masks text only, T2I image only, IT2IT both.
MaskPlan sample_training_mask(nd::Rng& rng, Task task, int n_image, int n_text);

// Positions (modality-local) to re-mask entering decode step k, 1 <= k < K:
// the min(ceil(gamma(k/K) n_mod), #candidates) lowest-confidence candidates,
// ties broken toward the lower index. `candidate[i]` marks eligibility
// (for images: not yet frozen; for text: every real-token slot).
std::vector<int> select_decode_mask(const std::vector<double>& confidence,
                                    const std::vector<char>& candidate, ScheduleKind kind, int k,
                                    int K, int n_mod);

struct RemaskDraw {
    double ratio = 0.0;            // r' = r_prev + (1 - r_prev) u, u in (0,1)
    std::vector<int> positions;    // ascending, strictly fewer than the first pass
};

// UnrollMask redraw: higher ratio, hence smaller schedule value; the new
// count is additionally capped one below the first-pass count so the second
// pass always re-masks strictly fewer positions.
RemaskDraw unroll_remask(nd::Rng& rng, double r_prev, ScheduleKind kind, int n_mod,
                         int count_prev);

}  // namespace magvlt::mask
