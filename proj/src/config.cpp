#include "ccl/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace ccl {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
}

long parse_long(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        long out = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& key, const std::string& v, Parse parse) {
    std::vector<T> out;
    std::string item;
    std::istringstream is(v);
    while (std::getline(is, item, ',')) {
        item = trim(item);
        if (item.empty()) throw ConfigError("config key '" + key + "': empty list item");
        out.push_back(parse(key, item));
    }
    if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
    return out;
}

}  // namespace

ModelConfig RunConfig::model_config() const {
    ModelConfig mc;
    mc.input_dim = data.feature_dim;
    mc.hidden_dims = hidden_dims;
    mc.embed_dim = embed_dim;
    mc.num_classes = data.num_classes;
    mc.init_scale = init_scale;
    return mc;
}

void RunConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw ConfigError("config field '" + field + "' " + why);
    };
    if (data.num_classes < 2) fail("data.num_classes", "must be >= 2");
    if (data.feature_dim < 1) fail("data.feature_dim", "must be >= 1");
    if (data.n1 < 1) fail("data.n1", "must be >= 1");
    if (data.m1 < 1) fail("data.m1", "must be >= 1");
    if (!(data.gamma_l > 0.0)) fail("data.gamma_l", "must be > 0");
    if (!(data.gamma_u.gamma > 0.0)) fail("data.gamma_u", "must be > 0");
    if (!(data.class_separation >= 0.0)) fail("data.class_separation", "must be >= 0");
    if (!(data.noise_scale >= 0.0)) fail("data.noise_scale", "must be >= 0");
    if (data.test_per_class < 1) fail("data.test_per_class", "must be >= 1");
    for (int h : hidden_dims)
        if (h < 1) fail("model.hidden_dims", "entries must be >= 1");
    if (embed_dim < 1) fail("model.embed_dim", "must be >= 1");
    if (!(init_scale >= 0.0)) fail("model.init_scale", "must be >= 0");
    if (!(ccl.lambda1 >= 0.0 && ccl.lambda1 <= 1.0)) fail("ccl.lambda1", "must be in [0,1]");
    if (!(ccl.lambda2 >= 0.0)) fail("ccl.lambda2", "must be >= 0");
    if (!(ccl.beta >= 0.0 && ccl.beta < 1.0)) fail("ccl.beta", "must be in [0,1)");
    if (!(ccl.tau >= 0.0)) fail("ccl.tau", "must be >= 0");
    if (!(ccl.conf_threshold > 0.0 && ccl.conf_threshold < 1.0))
        fail("ccl.conf_threshold", "must be in (0,1)");
    if (!(ccl.energy_temp > 0.0)) fail("ccl.energy_temp", "must be > 0");
    if (!(ccl.alpha > 0.0 && ccl.alpha <= 1.0)) fail("ccl.alpha", "must be in (0,1]");
    if (!(ccl.kernel_tc > 0.0)) fail("ccl.kernel_tc", "must be > 0");
    if (train.steps < 0) fail("train.steps", "must be >= 0");
    if (train.eval_interval < 1) fail("train.eval_interval", "must be >= 1");
    if (train.batch_size < 1) fail("train.batch_size", "must be >= 1");
    if (!(train.base_lr > 0.0)) fail("train.base_lr", "must be > 0");
    if (!(train.momentum >= 0.0 && train.momentum < 1.0)) fail("train.momentum", "must be in [0,1)");
    if (!(train.weight_decay >= 0.0)) fail("train.weight_decay", "must be >= 0");
    if (seeds.empty()) fail("run.seeds", "must list at least one seed");
    if (output_dir.empty()) fail("run.output_dir", "must not be empty");
}

std::string RunConfig::echo() const {
    std::ostringstream os;
    os << "data.num_classes = " << data.num_classes << "\n";
    os << "data.feature_dim = " << data.feature_dim << "\n";
    os << "data.n1 = " << data.n1 << "\n";
    os << "data.m1 = " << data.m1 << "\n";
    os << "data.gamma_l = " << data.gamma_l << "\n";
    os << "data.gamma_u = " << data.gamma_u.str() << "\n";
    os << "data.class_separation = " << data.class_separation << "\n";
    os << "data.noise_scale = " << data.noise_scale << "\n";
    os << "data.test_per_class = " << data.test_per_class << "\n";
    os << "model.hidden_dims = ";
    for (std::size_t i = 0; i < hidden_dims.size(); ++i) os << (i ? "," : "") << hidden_dims[i];
    os << "\n";
    os << "model.embed_dim = " << embed_dim << "\n";
    os << "model.init_scale = " << init_scale << "\n";
    os << "ccl.lambda1 = " << ccl.lambda1 << "\n";
    os << "ccl.lambda2 = " << ccl.lambda2 << "\n";
    os << "ccl.beta = " << ccl.beta << "\n";
    os << "ccl.tau = " << ccl.tau << "\n";
    os << "ccl.conf_threshold = " << ccl.conf_threshold << "\n";
    os << "ccl.energy_zeta = " << ccl.energy_zeta << "\n";
    os << "ccl.energy_temp = " << ccl.energy_temp << "\n";
    os << "ccl.alpha = " << ccl.alpha << "\n";
    os << "ccl.kernel_tc = " << ccl.kernel_tc << "\n";
    os << "ccl.consistency_mask = "
       << (ccl.consistency_mask == MaskKind::Confidence ? "confidence" : "energy") << "\n";
    os << "ccl.standard_branch_pseudo = " << (ccl.standard_branch_pseudo ? "true" : "false") << "\n";
    os << "train.steps = " << train.steps << "\n";
    os << "train.eval_interval = " << train.eval_interval << "\n";
    os << "train.batch_size = " << train.batch_size << "\n";
    os << "train.base_lr = " << train.base_lr << "\n";
    os << "train.momentum = " << train.momentum << "\n";
    os << "train.weight_decay = " << train.weight_decay << "\n";
    os << "ablation.dual_branch = " << (ablation.dual_branch ? "true" : "false") << "\n";
    os << "ablation.reliable_pl = " << (ablation.reliable_pl ? "true" : "false") << "\n";
    os << "ablation.smoothed_pl = " << (ablation.smoothed_pl ? "true" : "false") << "\n";
    os << "ablation.energy_mask = " << (ablation.energy_mask ? "true" : "false") << "\n";
    os << "run.seeds = ";
    for (std::size_t i = 0; i < seeds.size(); ++i) os << (i ? "," : "") << seeds[i];
    os << "\n";
    os << "run.output_dir = " << output_dir << "\n";
    os << "run.parallel = " << (parallel ? "true" : "false") << "\n";
    return os.str();
}

void set_config_key(RunConfig& c, const std::string& key, const std::string& value) {
    if (key == "data.num_classes") c.data.num_classes = static_cast<int>(parse_long(key, value));
    else if (key == "data.feature_dim") c.data.feature_dim = static_cast<int>(parse_long(key, value));
    else if (key == "data.n1") c.data.n1 = static_cast<int>(parse_long(key, value));
    else if (key == "data.m1") c.data.m1 = static_cast<int>(parse_long(key, value));
    else if (key == "data.gamma_l") c.data.gamma_l = parse_double(key, value);
    else if (key == "data.gamma_u") {
        try {
            c.data.gamma_u = UnlabeledRegime::parse(value);
        } catch (const std::exception& e) {
            throw ConfigError("config key 'data.gamma_u': " + std::string(e.what()));
        }
    } else if (key == "data.class_separation") c.data.class_separation = parse_double(key, value);
    else if (key == "data.noise_scale") c.data.noise_scale = parse_double(key, value);
    else if (key == "data.test_per_class") c.data.test_per_class = static_cast<int>(parse_long(key, value));
    else if (key == "data.seed") c.data.seed = static_cast<std::uint64_t>(parse_long(key, value));
    else if (key == "model.hidden_dims")
        c.hidden_dims = parse_list<int>(key, value, [](const std::string& k, const std::string& v) {
            return static_cast<int>(parse_long(k, v));
        });
    else if (key == "model.embed_dim") c.embed_dim = static_cast<int>(parse_long(key, value));
    else if (key == "model.init_scale") c.init_scale = parse_double(key, value);
    else if (key == "ccl.lambda1") c.ccl.lambda1 = parse_double(key, value);
    else if (key == "ccl.lambda2") c.ccl.lambda2 = parse_double(key, value);
    else if (key == "ccl.beta") c.ccl.beta = parse_double(key, value);
    else if (key == "ccl.tau") c.ccl.tau = parse_double(key, value);
    else if (key == "ccl.conf_threshold") c.ccl.conf_threshold = parse_double(key, value);
    else if (key == "ccl.energy_zeta") c.ccl.energy_zeta = parse_double(key, value);
    else if (key == "ccl.energy_temp") c.ccl.energy_temp = parse_double(key, value);
    else if (key == "ccl.alpha") c.ccl.alpha = parse_double(key, value);
    else if (key == "ccl.kernel_tc") c.ccl.kernel_tc = parse_double(key, value);
    else if (key == "ccl.consistency_mask") {
        if (value == "confidence") c.ccl.consistency_mask = MaskKind::Confidence;
        else if (value == "energy") c.ccl.consistency_mask = MaskKind::Energy;
        else throw ConfigError("config key 'ccl.consistency_mask': expected confidence|energy");
    } else if (key == "ccl.standard_branch_pseudo") c.ccl.standard_branch_pseudo = parse_bool(key, value);
    else if (key == "train.steps") c.train.steps = parse_long(key, value);
    else if (key == "train.eval_interval") c.train.eval_interval = parse_long(key, value);
    else if (key == "train.batch_size") c.train.batch_size = static_cast<int>(parse_long(key, value));
    else if (key == "train.base_lr") c.train.base_lr = parse_double(key, value);
    else if (key == "train.momentum") c.train.momentum = parse_double(key, value);
    else if (key == "train.weight_decay") c.train.weight_decay = parse_double(key, value);
    else if (key == "ablation.dual_branch") c.ablation.dual_branch = parse_bool(key, value);
    else if (key == "ablation.reliable_pl") c.ablation.reliable_pl = parse_bool(key, value);
    else if (key == "ablation.smoothed_pl") c.ablation.smoothed_pl = parse_bool(key, value);
    else if (key == "ablation.energy_mask") c.ablation.energy_mask = parse_bool(key, value);
    else if (key == "run.seeds")
        c.seeds = parse_list<std::uint64_t>(key, value, [](const std::string& k, const std::string& v) {
            return static_cast<std::uint64_t>(parse_long(k, v));
        });
    else if (key == "run.output_dir") c.output_dir = value;
    else if (key == "run.parallel") c.parallel = parse_bool(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    RunConfig config;
    std::string line;
    int line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_number) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        set_config_key(config, key, value);
    }
    return config;
}

void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides) {
    for (const std::string& item : overrides) {
        std::string body = item;
        if (body.rfind("--", 0) == 0) body = body.substr(2);
        std::size_t eq = body.find('=');
        if (eq == std::string::npos)
            throw ConfigError("override '" + item + "': expected --section.key=value");
        set_config_key(config, trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
    }
}

}  // namespace ccl
