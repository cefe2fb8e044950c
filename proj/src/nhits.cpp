#include "thh/nhits.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace thh::nhits {

struct ForecastModel::EvalGraph {
    ad::GraphT<float> g;
    ad::GraphT<float>::Id x = 0, y = 0;
    explicit EvalGraph(const NhitsNet<float>& net) : g(kEvalChunk) {
        x = g.input(net.config().channels * net.config().context_len);
        y = net.build_forward(g, x, /*trainable=*/false);
    }
};

void ForecastModel::invalidate_cache() const {
    std::lock_guard lock(*mutex_);
    eval_.reset();
}

void ForecastModel::forecast_rows(const float* contexts, std::size_t n, float* outputs) const {
    const std::size_t in_cols = channels() * context_len();
    const std::size_t out_cols = channels() * horizon();
    std::lock_guard lock(*mutex_);
    if (!eval_) eval_ = std::make_shared<EvalGraph>(net_);
    std::size_t done = 0;
    while (done < n) {
        std::size_t take = std::min(kEvalChunk, n - done);
        eval_->g.set_batch(take);
        eval_->g.set_input(eval_->x, {contexts + done * in_cols, take * in_cols});
        eval_->g.forward(ad::Mode::kEval);
        auto v = eval_->g.value(eval_->y);
        std::memcpy(outputs + done * out_cols, v.data(), take * out_cols * sizeof(float));
        done += take;
    }
}

namespace {

constexpr char kMagic[4] = {'T', 'H', 'H', 'M'};
constexpr std::uint16_t kVersion = 1;

template <typename T>
void put_raw(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
void get_raw(std::istream& in, T& v, const std::string& path) {
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw DataError(path + ": truncated model file");
}

std::string join_sizes(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    return out;
}

std::vector<std::size_t> parse_sizes(const std::string& s, const std::string& path) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(static_cast<std::size_t>(std::stoull(item)));
        } catch (const std::exception&) {
            throw DataError(path + ": bad list entry '" + item + "' in model manifest");
        }
    }
    return out;
}

} // namespace

void ForecastModel::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    const ModelConfig& c = config();

    std::ostringstream m;
    char buf[64];
    m << "context_len=" << c.context_len << '\n';
    m << "horizon=" << c.horizon << '\n';
    m << "channels=" << c.channels << '\n';
    m << "stacks=" << c.stacks << '\n';
    m << "blocks_per_stack=" << c.blocks_per_stack << '\n';
    m << "layers_per_block=" << c.layers_per_block << '\n';
    m << "layer_width=" << c.layer_width << '\n';
    std::snprintf(buf, sizeof buf, "%.17g", c.dropout_rate);
    m << "dropout_rate=" << buf << '\n';
    m << "pooling_kernels=" << join_sizes(c.pooling_kernels) << '\n';
    m << "downsample_ratios=" << join_sizes(c.downsample_ratios) << '\n';
    m << "seed=" << c.seed << '\n';
    for (std::size_t i = 0; i < norm_params.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", norm_params[i].first);
        m << "norm_min_" << i << '=' << buf << '\n';
        std::snprintf(buf, sizeof buf, "%.17g", norm_params[i].second);
        m << "norm_max_" << i << '=' << buf << '\n';
    }
    for (std::size_t i = 0; i < channel_names.size(); ++i)
        m << "channel_name_" << i << '=' << channel_names[i] << '\n';
    const std::string manifest = m.str();

    out.write(kMagic, 4);
    put_raw(out, kVersion);
    put_raw(out, static_cast<std::uint32_t>(manifest.size()));
    out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
    put_raw(out, static_cast<std::uint64_t>(net_.parameter_count()));
    for (const auto& t : net_.parameters())
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!out) throw DataError("failed writing " + path);
}

ForecastModel ForecastModel::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) throw DataError(path + ": not a model file");
    std::uint16_t version;
    get_raw(in, version, path);
    if (version != kVersion)
        throw DataError(path + ": model format version " + std::to_string(version) +
                        " not supported (this build reads version " + std::to_string(kVersion) + ")");
    std::uint32_t mlen;
    get_raw(in, mlen, path);
    std::string manifest(mlen, '\0');
    in.read(manifest.data(), mlen);
    if (!in) throw DataError(path + ": truncated model file");

    std::map<std::string, std::string> kv;
    std::stringstream ss(manifest);
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw DataError(path + ": bad manifest line '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto want = [&](const std::string& key) {
        auto it = kv.find(key);
        if (it == kv.end()) throw DataError(path + ": manifest missing " + key);
        return it->second;
    };
    auto want_num = [&](const std::string& key) {
        try {
            return static_cast<std::size_t>(std::stoull(want(key)));
        } catch (const DataError&) {
            throw;
        } catch (const std::exception&) {
            throw DataError(path + ": bad numeric manifest value for " + key);
        }
    };

    ModelConfig c;
    c.context_len = want_num("context_len");
    c.horizon = want_num("horizon");
    c.channels = want_num("channels");
    c.stacks = want_num("stacks");
    c.blocks_per_stack = want_num("blocks_per_stack");
    c.layers_per_block = want_num("layers_per_block");
    c.layer_width = want_num("layer_width");
    c.dropout_rate = std::stod(want("dropout_rate"));
    c.pooling_kernels = parse_sizes(want("pooling_kernels"), path);
    c.downsample_ratios = parse_sizes(want("downsample_ratios"), path);
    c.seed = static_cast<std::uint64_t>(std::stoull(want("seed")));
    c.validate();

    ForecastModel model(c);
    for (std::size_t i = 0;; ++i) {
        auto lo = kv.find("norm_min_" + std::to_string(i));
        auto hi = kv.find("norm_max_" + std::to_string(i));
        if (lo == kv.end() || hi == kv.end()) break;
        model.norm_params.emplace_back(std::stod(lo->second), std::stod(hi->second));
    }
    for (std::size_t i = 0;; ++i) {
        auto it = kv.find("channel_name_" + std::to_string(i));
        if (it == kv.end()) break;
        model.channel_names.push_back(it->second);
    }

    std::uint64_t count;
    get_raw(in, count, path);
    if (count != model.net_.parameter_count())
        throw DataError(path + ": parameter count " + std::to_string(count) +
                        " does not match architecture (" +
                        std::to_string(model.net_.parameter_count()) + ")");
    for (auto& t : model.net_.parameters()) {
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        if (!in) throw DataError(path + ": truncated model file");
    }
    return model;
}

} // namespace thh::nhits
