#include "ccl/model.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ccl {

std::size_t ModelState::param_count() const {
    std::size_t n = 0;
    for (const auto& l : encoder) n += l.weight.size() + l.bias.size();
    n += head_standard.weight.size() + head_standard.bias.size();
    n += head_balanced.weight.size() + head_balanced.bias.size();
    n += projection.weight.size() + projection.bias.size();
    return n;
}

std::vector<ParamRef> parameters(ModelState& state) {
    std::vector<ParamRef> out;
    for (std::size_t i = 0; i < state.encoder.size(); ++i) {
        out.push_back({"encoder." + std::to_string(i) + ".weight", &state.encoder[i].weight});
        out.push_back({"encoder." + std::to_string(i) + ".bias", &state.encoder[i].bias});
    }
    out.push_back({"head_standard.weight", &state.head_standard.weight});
    out.push_back({"head_standard.bias", &state.head_standard.bias});
    out.push_back({"head_balanced.weight", &state.head_balanced.weight});
    out.push_back({"head_balanced.bias", &state.head_balanced.bias});
    out.push_back({"projection.weight", &state.projection.weight});
    out.push_back({"projection.bias", &state.projection.bias});
    return out;
}

namespace {

LinearLayer init_layer(int out_dim, int in_dim, double init_scale, RandomStream& rng) {
    LinearLayer l{Matrix(out_dim, in_dim), Matrix(1, out_dim)};
    double s = init_scale / std::sqrt(static_cast<double>(in_dim));
    for (double& w : l.weight.data()) w = s * rng.normal();
    return l;
}

}  // namespace

ModelState init_model(const ModelConfig& config, RandomStream& rng) {
    if (config.input_dim < 1 || config.embed_dim < 1 || config.num_classes < 1)
        throw std::invalid_argument("init_model: dimensions must be >= 1");
    for (int h : config.hidden_dims)
        if (h < 1) throw std::invalid_argument("init_model: hidden dims must be >= 1");

    ModelState state;
    state.config = config;
    int in_dim = config.input_dim;
    for (int h : config.hidden_dims) {
        state.encoder.push_back(init_layer(h, in_dim, config.init_scale, rng));
        in_dim = h;
    }
    state.head_standard = init_layer(config.num_classes, in_dim, config.init_scale, rng);
    state.head_balanced = init_layer(config.num_classes, in_dim, config.init_scale, rng);
    state.projection = init_layer(config.embed_dim, in_dim, config.init_scale, rng);

    for (const ParamRef& p : parameters(state))
        state.momentum.push_back(Matrix(p.tensor->rows(), p.tensor->cols()));
    return state;
}

ModelVars lift(ad::Tape& tape, const ModelState& state, bool requires_grad) {
    ModelVars vars;
    auto lift_tensor = [&](const Matrix& m) {
        ad::Var v = requires_grad ? tape.leaf(m) : tape.constant(m);
        vars.params.push_back(v);
        return v;
    };
    auto lift_layer = [&](const LinearLayer& l) {
        ad::Var w = lift_tensor(l.weight);
        ad::Var b = lift_tensor(l.bias);
        return std::make_pair(w, b);
    };
    for (const auto& l : state.encoder) vars.encoder.push_back(lift_layer(l));
    vars.head_standard = lift_layer(state.head_standard);
    vars.head_balanced = lift_layer(state.head_balanced);
    vars.projection = lift_layer(state.projection);
    return vars;
}

ForwardVars forward(ad::Tape& tape, const ModelVars& vars, const Matrix& batch) {
    ad::Var h = tape.constant(batch);
    for (const auto& [w, b] : vars.encoder) h = ad::relu(ad::linear(h, w, b));
    ForwardVars out;
    out.features = h;
    out.logits_s = ad::linear(h, vars.head_standard.first, vars.head_standard.second);
    out.logits_b = ad::linear(h, vars.head_balanced.first, vars.head_balanced.second);
    out.embeddings = ad::row_l2_normalize(
        ad::linear(h, vars.projection.first, vars.projection.second), 1e-12);
    return out;
}

ForwardOutput forward_values(const ModelState& state, const Matrix& batch) {
    if (batch.cols() != state.config.input_dim)
        throw std::invalid_argument("forward: batch width does not match input_dim");
    ad::Tape tape;
    ModelVars vars = lift(tape, state, false);
    ForwardVars fv = forward(tape, vars, batch);
    ForwardOutput out{fv.features.value(), fv.logits_s.value(), fv.logits_b.value(),
                      fv.embeddings.value()};
    require_finite(out.features, "forward: activations");
    require_finite(out.logits_s, "forward: standard logits");
    require_finite(out.logits_b, "forward: balanced logits");
    require_finite(out.embeddings, "forward: embeddings");
    return out;
}

void sgd_step(ModelState& state, const std::vector<Matrix>& grads, double lr, double momentum,
              double weight_decay) {
    std::vector<ParamRef> params = parameters(state);
    if (grads.size() != params.size())
        throw std::invalid_argument("sgd_step: gradient count does not match parameter count");
    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix& p = *params[i].tensor;
        const Matrix& g = grads[i];
        require_same_shape(p, g, "sgd_step");
        require_finite(g, "sgd_step: gradients");
        Matrix& buf = state.momentum[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            buf.data()[k] = momentum * buf.data()[k] + g.data()[k] + weight_decay * p.data()[k];
            p.data()[k] -= lr * buf.data()[k];
        }
    }
}

double cosine_lr(double base_lr, long step, long total_steps) {
    if (step < 0 || step > total_steps) throw std::invalid_argument("cosine_lr: step out of range");
    if (total_steps == 0) return base_lr;
    double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return base_lr * std::cos(7.0 * 3.14159265358979323846 * frac / 16.0);
}

namespace {

void write_le_doubles(std::ofstream& out, const Matrix& m) {
    for (double x : m.data()) {
        std::uint64_t bits;
        std::memcpy(&bits, &x, sizeof(bits));
        unsigned char bytes[8];
        for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
        out.write(reinterpret_cast<const char*>(bytes), 8);
    }
}

void read_le_doubles(std::ifstream& in, Matrix& m) {
    for (double& x : m.data()) {
        unsigned char bytes[8];
        in.read(reinterpret_cast<char*>(bytes), 8);
        if (!in) throw std::runtime_error("load_checkpoint: truncated tensor data");
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
        std::memcpy(&x, &bits, sizeof(x));
    }
}

}  // namespace

void save_checkpoint(const ModelState& state, long step, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot write " + path);
    out << "ccl-checkpoint v1\n";
    out << "step = " << step << "\n";
    out << "input_dim = " << state.config.input_dim << "\n";
    out << "hidden_dims =";
    for (int h : state.config.hidden_dims) out << " " << h;
    out << "\n";
    out << "embed_dim = " << state.config.embed_dim << "\n";
    out << "num_classes = " << state.config.num_classes << "\n";
    out << "init_scale = " << state.config.init_scale << "\n";
    ModelState& mutable_state = const_cast<ModelState&>(state);
    std::vector<ParamRef> params = parameters(mutable_state);
    for (const ParamRef& p : params)
        out << "tensor " << p.name << " " << p.tensor->rows() << " " << p.tensor->cols() << "\n";
    out << "end-header\n";
    for (const ParamRef& p : params) write_le_doubles(out, *p.tensor);
}

std::pair<ModelState, long> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::string line;
    std::getline(in, line);
    if (line != "ccl-checkpoint v1") throw std::runtime_error("load_checkpoint: bad magic line");

    long step = 0;
    ModelConfig config;
    std::vector<std::pair<std::string, std::pair<int, int>>> tensors;
    while (std::getline(in, line) && line != "end-header") {
        std::istringstream is(line);
        std::string key;
        is >> key;
        if (key == "tensor") {
            std::string name;
            int r, c;
            is >> name >> r >> c;
            tensors.emplace_back(name, std::make_pair(r, c));
            continue;
        }
        std::string eq;
        is >> eq;
        if (key == "step") is >> step;
        else if (key == "input_dim") is >> config.input_dim;
        else if (key == "embed_dim") is >> config.embed_dim;
        else if (key == "num_classes") is >> config.num_classes;
        else if (key == "init_scale") is >> config.init_scale;
        else if (key == "hidden_dims") {
            config.hidden_dims.clear();
            int h;
            while (is >> h) config.hidden_dims.push_back(h);
        } else {
            throw std::runtime_error("load_checkpoint: unknown header key '" + key + "'");
        }
    }

    RandomStream rng = seeded_rng(0);
    ModelState state = init_model(config, rng);
    std::vector<ParamRef> params = parameters(state);
    if (params.size() != tensors.size())
        throw std::runtime_error("load_checkpoint: tensor count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].name != tensors[i].first ||
            params[i].tensor->rows() != tensors[i].second.first ||
            params[i].tensor->cols() != tensors[i].second.second)
            throw std::runtime_error("load_checkpoint: tensor layout mismatch at " + tensors[i].first);
        read_le_doubles(in, *params[i].tensor);
    }
    for (Matrix& buf : state.momentum) buf = Matrix(buf.rows(), buf.cols());
    return {std::move(state), step};
}

}  // namespace ccl
