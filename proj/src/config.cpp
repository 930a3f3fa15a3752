#include "magn/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace magn {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

int to_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const int r = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw DataError("config: bad integer for " + key + ": '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw DataError("config: bad number for " + key + ": '" + v + "'");
    }
}

uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const uint64_t r = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw DataError("config: bad unsigned integer for " + key + ": '" + v + "'");
    }
}

const std::set<std::string>& model_keys() {
    static const std::set<std::string> keys{
        "channels",  "res_blocks_pre", "res_blocks_post", "graph_blocks",  "heads",
        "window",    "stride",         "padding",         "in_channels",   "pixel_sim_dim",
        "patch_sim_dim", "node_budget", "variant",        "precision"};
    return keys;
}

const std::set<std::string>& train_keys() {
    static const std::set<std::string> keys{
        "lr",   "beta1", "beta2", "epsilon",  "batch_size",          "epochs", "steps",
        "crop", "seed",  "kind",  "sigma",    "checkpoint_interval", "augment"};
    return keys;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

} // namespace

KeyValues parse_key_values(const std::string& text) {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw DataError("config line " + std::to_string(lineno) + ": expected key=value, got '" +
                            line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw DataError("config line " + std::to_string(lineno) + ": empty key");
        kv[key] = value;
    }
    return kv;
}

KeyValues load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_key_values(buf.str());
}

void check_known_keys(const KeyValues& kv) {
    for (const auto& [k, v] : kv) {
        (void)v;
        if (k == "step") continue; // written by checkpoints
        if (!model_keys().count(k) && !train_keys().count(k))
            throw DataError("config: unknown key '" + k + "'");
    }
}

ModelConfig model_config_from(const KeyValues& kv) {
    ModelConfig c;
    for (const auto& [k, v] : kv) {
        if (k == "channels") c.channels = to_int(k, v);
        else if (k == "res_blocks_pre") c.res_blocks_pre = to_int(k, v);
        else if (k == "res_blocks_post") c.res_blocks_post = to_int(k, v);
        else if (k == "graph_blocks") c.graph_blocks = to_int(k, v);
        else if (k == "heads") c.heads = to_int(k, v);
        else if (k == "window") c.window = to_int(k, v);
        else if (k == "stride") c.stride = to_int(k, v);
        else if (k == "padding") c.padding = to_int(k, v);
        else if (k == "in_channels") c.in_channels = to_int(k, v);
        else if (k == "pixel_sim_dim") c.pixel_sim_dim = to_int(k, v);
        else if (k == "patch_sim_dim") c.patch_sim_dim = to_int(k, v);
        else if (k == "node_budget") c.node_budget = to_int(k, v);
        else if (k == "variant") c.variant = variant_from_string(v);
        else if (k == "precision") {
            if (v == "f32") c.precision = Precision::f32;
            else if (v == "f64") c.precision = Precision::f64;
            else throw DataError("config: precision must be f32 or f64, got '" + v + "'");
        }
    }
    c.validate();
    return c;
}

TrainConfig train_config_from(const KeyValues& kv) {
    TrainConfig c;
    for (const auto& [k, v] : kv) {
        if (k == "lr") c.lr = to_double(k, v);
        else if (k == "beta1") c.beta1 = to_double(k, v);
        else if (k == "beta2") c.beta2 = to_double(k, v);
        else if (k == "epsilon") c.epsilon = to_double(k, v);
        else if (k == "batch_size") c.batch_size = to_int(k, v);
        else if (k == "epochs") c.epochs = to_int(k, v);
        else if (k == "steps") c.steps = to_int(k, v);
        else if (k == "crop") c.crop = to_int(k, v);
        else if (k == "seed") c.seed = to_u64(k, v);
        else if (k == "kind") c.degrade.kind = degrade_kind_from_string(v);
        else if (k == "sigma") c.degrade.sigma = to_double(k, v);
        else if (k == "checkpoint_interval") c.checkpoint_interval = to_int(k, v);
        else if (k == "augment") c.augment = to_int(k, v) != 0;
    }
    c.validate();
    return c;
}

KeyValues render_config(const ModelConfig& m) {
    KeyValues kv;
    kv["channels"] = std::to_string(m.channels);
    kv["res_blocks_pre"] = std::to_string(m.res_blocks_pre);
    kv["res_blocks_post"] = std::to_string(m.res_blocks_post);
    kv["graph_blocks"] = std::to_string(m.graph_blocks);
    kv["heads"] = std::to_string(m.heads);
    kv["window"] = std::to_string(m.window);
    kv["stride"] = std::to_string(m.stride);
    kv["padding"] = std::to_string(m.padding);
    kv["in_channels"] = std::to_string(m.in_channels);
    kv["pixel_sim_dim"] = std::to_string(m.pixel_sim());
    kv["patch_sim_dim"] = std::to_string(m.patch_sim());
    kv["node_budget"] = std::to_string(m.node_budget);
    kv["variant"] = to_string(m.variant);
    kv["precision"] = m.precision == Precision::f32 ? "f32" : "f64";
    return kv;
}

KeyValues render_config(const ModelConfig& m, const TrainConfig& t) {
    KeyValues kv = render_config(m);
    kv["lr"] = fmt(t.lr);
    kv["beta1"] = fmt(t.beta1);
    kv["beta2"] = fmt(t.beta2);
    kv["epsilon"] = fmt(t.epsilon);
    kv["batch_size"] = std::to_string(t.batch_size);
    kv["epochs"] = std::to_string(t.epochs);
    kv["steps"] = std::to_string(t.steps);
    kv["crop"] = std::to_string(t.crop);
    kv["seed"] = std::to_string(t.seed);
    kv["kind"] = t.degrade.kind == DegradeKind::gaussian ? "gaussian" : "mosaic";
    kv["sigma"] = fmt(t.degrade.sigma);
    kv["checkpoint_interval"] = std::to_string(t.checkpoint_interval);
    kv["augment"] = t.augment ? "1" : "0";
    return kv;
}

} // namespace magn
