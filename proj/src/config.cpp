#include "magvlt/config.hpp"

#include <climits>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <variant>
#include <vector>

namespace magvlt::cfg {

uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string hex64(uint64_t x) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[size_t(i)] = digits[x & 0xf];
        x >>= 4;
    }
    return out;
}

namespace {

using Ref = std::variant<int RunConfig::*, int64_t RunConfig::*, uint64_t RunConfig::*,
                         double RunConfig::*, bool RunConfig::*, std::string RunConfig::*>;

struct Field {
    const char* name;
    Ref ref;
};

const std::vector<Field>& fields() {
    static const std::vector<Field> f = {
        {"grid", &RunConfig::grid},
        {"text_len", &RunConfig::text_len},
        {"n_train", &RunConfig::n_train},
        {"n_val", &RunConfig::n_val},
        {"d_model", &RunConfig::d_model},
        {"n_heads", &RunConfig::n_heads},
        {"n_layers", &RunConfig::n_layers},
        {"ffn_mult", &RunConfig::ffn_mult},
        {"tied_head", &RunConfig::tied_head},
        {"mode", &RunConfig::mode},
        {"batch_size", &RunConfig::batch_size},
        {"total_steps", &RunConfig::total_steps},
        {"base_lr", &RunConfig::base_lr},
        {"warmup_steps", &RunConfig::warmup_steps},
        {"lr_floor", &RunConfig::lr_floor},
        {"clip_norm", &RunConfig::clip_norm},
        {"label_smoothing", &RunConfig::label_smoothing},
        {"lambda_tl", &RunConfig::lambda_tl},
        {"lambda_um", &RunConfig::lambda_um},
        {"lambda_ms", &RunConfig::lambda_ms},
        {"w_t2i", &RunConfig::w_t2i},
        {"w_i2t", &RunConfig::w_i2t},
        {"w_it2it", &RunConfig::w_it2it},
        {"unroll_shared_plan", &RunConfig::unroll_shared_plan},
        {"ar_w_gen", &RunConfig::ar_w_gen},
        {"ar_w_cond", &RunConfig::ar_w_cond},
        {"beta1", &RunConfig::beta1},
        {"beta2", &RunConfig::beta2},
        {"adam_eps", &RunConfig::adam_eps},
        {"weight_decay", &RunConfig::weight_decay},
        {"checkpoint_every", &RunConfig::checkpoint_every},
        {"k_image", &RunConfig::k_image},
        {"k_text", &RunConfig::k_text},
        {"temp_image", &RunConfig::temp_image},
        {"temp_text", &RunConfig::temp_text},
        {"conf_noise", &RunConfig::conf_noise},
        {"len_init_lo", &RunConfig::len_init_lo},
        {"len_init_hi", &RunConfig::len_init_hi},
        {"candidates", &RunConfig::candidates},
        {"eval_samples", &RunConfig::eval_samples},
        {"bench_repeats", &RunConfig::bench_repeats},
        {"seed", &RunConfig::seed},
    };
    return f;
}

[[noreturn]] void bad_value(const std::string& key) {
    throw std::invalid_argument("config: bad value for '" + key + "'");
}

long long parse_ll(const std::string& key, const std::string& value) {
    size_t used = 0;
    long long x = 0;
    try {
        x = std::stoll(value, &used);
    } catch (const std::exception&) {
        bad_value(key);
    }
    if (used != value.size()) bad_value(key);
    return x;
}

uint64_t parse_ull(const std::string& key, const std::string& value) {
    if (!value.empty() && value[0] == '-') bad_value(key);
    size_t used = 0;
    unsigned long long x = 0;
    try {
        x = std::stoull(value, &used);
    } catch (const std::exception&) {
        bad_value(key);
    }
    if (used != value.size()) bad_value(key);
    return uint64_t(x);
}

double parse_d(const std::string& key, const std::string& value) {
    size_t used = 0;
    double x = 0;
    try {
        x = std::stod(value, &used);
    } catch (const std::exception&) {
        bad_value(key);
    }
    if (used != value.size()) bad_value(key);
    return x;
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig RunConfig::toy() { return RunConfig{}; }

RunConfig RunConfig::published_scale() {
    RunConfig c;
    c.grid = 16;
    c.text_len = 32;
    c.d_model = 1024;
    c.n_heads = 8;
    c.n_layers = 24;
    c.batch_size = 4096;
    c.total_steps = 40000;
    c.base_lr = 4.5e-4;
    return c;
}

void RunConfig::validate() const {
    if (grid < 2) throw std::invalid_argument("config: grid < 2");
    if (text_len < 1) throw std::invalid_argument("config: text_len < 1");
    if (n_train < 1 || n_val < 1) throw std::invalid_argument("config: empty dataset split");
    if (mode != "masked" && mode != "ar_i2t" && mode != "ar_t2i")
        throw std::invalid_argument("config: mode must be masked, ar_i2t or ar_t2i");
    if (k_image < 1 || k_text < 1) throw std::invalid_argument("config: decode steps < 1");
    if (eval_samples < 1) throw std::invalid_argument("config: eval_samples < 1");
    if (bench_repeats < 1) throw std::invalid_argument("config: bench_repeats < 1");
    model_config().validate();
    trainer_config().validate();
    decode_request(true).validate();
    decode_request(false).validate();
}

tok::Layout RunConfig::layout() const {
    return {grid, text_len,
            mode == "ar_t2i" ? tok::Order::text_first : tok::Order::image_first};
}

net::ModelConfig RunConfig::model_config() const {
    net::ModelConfig m;
    m.vocab_size = tok::Vocabulary::make(grid, text_len).size();
    m.seq_len = layout().seq_len();
    m.d_model = d_model;
    m.n_heads = n_heads;
    m.n_layers = n_layers;
    m.ffn_mult = ffn_mult;
    m.n_text = text_len;
    m.causal = mode != "masked";
    m.tied_head = tied_head;
    return m;
}

train::TrainerConfig RunConfig::trainer_config() const {
    train::TrainerConfig t;
    t.batch_size = batch_size;
    t.total_steps = total_steps;
    t.base_lr = base_lr;
    t.warmup_steps = warmup_steps;
    t.lr_floor = lr_floor;
    t.clip_norm = clip_norm;
    t.label_smoothing = label_smoothing;
    t.lambda_tl = lambda_tl;
    t.lambda_um = lambda_um;
    t.lambda_ms = lambda_ms;
    t.weights = train::TaskWeights{w_t2i, w_i2t, w_it2it};
    t.unroll_shared_plan = unroll_shared_plan;
    t.ar_w_gen = ar_w_gen;
    t.ar_w_cond = ar_w_cond;
    t.checkpoint_every = checkpoint_every;
    t.adamw = nd::AdamWConfig{beta1, beta2, adam_eps, weight_decay};
    return t;
}

dec::DecodeRequest RunConfig::decode_request(bool image_k) const {
    dec::DecodeRequest r;
    r.K = image_k ? k_image : k_text;
    r.temp_image = temp_image;
    r.temp_text = temp_text;
    r.conf_noise = conf_noise;
    r.candidates = candidates;
    r.len_init_lo = len_init_lo;
    r.len_init_hi = len_init_hi;
    return r;
}

std::string RunConfig::serialize() const {
    std::ostringstream os;
    for (const auto& f : fields()) {
        os << f.name << '=';
        std::visit(
            [&](auto ref) {
                using M = std::decay_t<decltype(this->*ref)>;
                if constexpr (std::is_same_v<M, bool>)
                    os << (this->*ref ? "true" : "false");
                else if constexpr (std::is_same_v<M, double>)
                    os << train::fmt_g(this->*ref);
                else
                    os << this->*ref;
            },
            f.ref);
        os << '\n';
    }
    return os.str();
}

void RunConfig::set(const std::string& key, const std::string& value) {
    for (const auto& f : fields()) {
        if (key != f.name) continue;
        std::visit(
            [&](auto ref) {
                using M = std::decay_t<decltype(this->*ref)>;
                if constexpr (std::is_same_v<M, bool>) {
                    if (value == "true" || value == "1")
                        this->*ref = true;
                    else if (value == "false" || value == "0")
                        this->*ref = false;
                    else
                        bad_value(key);
                } else if constexpr (std::is_same_v<M, double>) {
                    this->*ref = parse_d(key, value);
                } else if constexpr (std::is_same_v<M, std::string>) {
                    this->*ref = value;
                } else if constexpr (std::is_same_v<M, uint64_t>) {
                    this->*ref = parse_ull(key, value);
                } else {
                    const long long x = parse_ll(key, value);
                    if constexpr (std::is_same_v<M, int>) {
                        if (x < INT_MIN || x > INT_MAX) bad_value(key);
                        this->*ref = int(x);
                    } else {
                        this->*ref = x;
                    }
                }
            },
            f.ref);
        return;
    }
    throw std::invalid_argument("config: unknown key '" + key + "'");
}

RunConfig RunConfig::parse(const std::string& text) {
    RunConfig c;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: expected key=value, got '" + t + "'");
        c.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return c;
}

RunConfig RunConfig::parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse(buf.str());
}

void RunConfig::apply_env_overrides() {
    if (const char* s = std::getenv("MAGVLT_SEED")) {
        const std::string v(s);
        if (v.empty()) return;
        seed = parse_ull("MAGVLT_SEED", v);
    }
}

}  // namespace magvlt::cfg
