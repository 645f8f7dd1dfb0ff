#include "checkpoint.hpp"

#include <fstream>

#include "serialize.hpp"

namespace dg {

namespace {

constexpr char kMagic[] = "DGCKPT\n";    // 7 bytes
constexpr char kTrailer[] = "END\n";     // 4 bytes
constexpr uint32_t kVersion = 1;

// Corrupt length prefixes must fail as Format, not as an allocation of
// whatever garbage the bytes spell.
std::string read_string_bounded(std::istream& is, uint64_t max_len) {
    const uint64_t n = read_le<uint64_t>(is);
    require(n <= max_len, ErrorKind::Format, "checkpoint: implausible string length");
    std::string s(size_t(n), '\0');
    is.read(s.data(), std::streamsize(n));
    require(bool(is), ErrorKind::Io, "unexpected end of stream");
    return s;
}

void expect_bytes(std::istream& is, const char* want, size_t n, const char* what) {
    std::string got(n, '\0');
    is.read(got.data(), std::streamsize(n));
    require(bool(is) && got == std::string(want, n), ErrorKind::Format,
            std::string("checkpoint: bad ") + what);
}

void write_tensor_data(std::ostream& os, const Tensor<float>& t) {
    write_array_le(os, t.data.data(), t.data.size());
}

void read_tensor_data(std::istream& is, Tensor<float>& t) {
    read_array_le(is, t.data.data(), t.data.size());
}

template <typename T>
T header_field(const Json& j, const char* key) {
    require(j.contains(key), ErrorKind::Format,
            std::string("checkpoint header: missing key \"") + key + "\"");
    try {
        return j.at(key).get<T>();
    } catch (const Json::exception&) {
        fail(ErrorKind::Format,
             std::string("checkpoint header: bad value for \"") + key + "\"");
    }
}

}  // namespace

void write_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    require(os.good(), ErrorKind::Io, "cannot open " + path + " for writing");

    os.write(kMagic, 7);
    write_le<uint32_t>(os, kVersion);

    Json h;
    h["config"] = train_config_to_json(ck.config);
    h["step"] = ck.step;
    h["num_views"] = ck.num_views;
    Json ms;
    ms["extent_x"] = ck.map_spec.extent_x;
    ms["extent_y"] = ck.map_spec.extent_y;
    ms["grid_w"] = ck.map_spec.grid_w;
    ms["grid_h"] = ck.map_spec.grid_h;
    ms["num_classes"] = ck.map_spec.num_classes;
    h["map_spec"] = ms;
    h["map_channels"] = ck.map_channels;
    h["init_seed"] = ck.init_seed;
    h["vocab_words"] = ck.vocab_words;
    h["vocab_max_len"] = ck.vocab_max_len;
    h["class_names"] = ck.class_names;
    h["opt_step"] = ck.opt_step;
    h["rng_state"] = ck.rng_state;
    write_string(os, dump_json(h));

    write_le<uint64_t>(os, ck.weights.size());
    for (const auto& [name, t] : ck.weights) {
        write_string(os, name);
        write_le<uint32_t>(os, uint32_t(t.ndim()));
        for (int d : t.shape) write_le<int32_t>(os, d);
        write_tensor_data(os, t);
    }

    write_le<uint8_t>(os, ck.has_optimizer ? 1 : 0);
    if (ck.has_optimizer) {
        require(ck.moment1.size() == ck.weights.size() &&
                    ck.moment2.size() == ck.weights.size(),
                ErrorKind::Shape, "optimizer moments do not match the parameters");
        for (const auto& t : ck.moment1) write_tensor_data(os, t);
        for (const auto& t : ck.moment2) write_tensor_data(os, t);
    }

    os.write(kTrailer, 4);
    require(os.good(), ErrorKind::Io, "write failed for " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), ErrorKind::Io, "cannot open " + path);

    expect_bytes(is, kMagic, 7, "magic");
    const uint32_t version = read_le<uint32_t>(is);
    require(version == kVersion, ErrorKind::Format,
            "unsupported checkpoint version " + std::to_string(version));

    const Json h = parse_json(read_string_bounded(is, 16u << 20), path + " header");
    check_keys(h,
               {"config", "step", "num_views", "map_spec", "map_channels",
                "init_seed", "vocab_words", "vocab_max_len", "class_names",
                "opt_step", "rng_state"},
               "checkpoint header");

    Checkpoint ck;
    require(h.contains("config"), ErrorKind::Format,
            "checkpoint header: missing key \"config\"");
    ck.config = train_config_from_json(h.at("config"));
    ck.step = header_field<int64_t>(h, "step");
    ck.num_views = header_field<int>(h, "num_views");
    require(h.contains("map_spec"), ErrorKind::Format,
            "checkpoint header: missing key \"map_spec\"");
    const Json& ms = h.at("map_spec");
    check_keys(ms, {"extent_x", "extent_y", "grid_w", "grid_h", "num_classes"},
               "checkpoint header.map_spec");
    ck.map_spec.extent_x = header_field<double>(ms, "extent_x");
    ck.map_spec.extent_y = header_field<double>(ms, "extent_y");
    ck.map_spec.grid_w = header_field<int>(ms, "grid_w");
    ck.map_spec.grid_h = header_field<int>(ms, "grid_h");
    ck.map_spec.num_classes = header_field<int>(ms, "num_classes");
    ck.map_channels = header_field<int>(h, "map_channels");
    ck.init_seed = header_field<uint64_t>(h, "init_seed");
    ck.vocab_words = header_field<std::vector<std::string>>(h, "vocab_words");
    ck.vocab_max_len = header_field<int>(h, "vocab_max_len");
    ck.class_names = header_field<std::vector<std::string>>(h, "class_names");
    ck.opt_step = header_field<int>(h, "opt_step");
    ck.rng_state = header_field<std::string>(h, "rng_state");

    const uint64_t count = read_le<uint64_t>(is);
    require(count <= 1u << 20, ErrorKind::Format,
            "checkpoint: implausible parameter count");
    ck.weights.reserve(size_t(count));
    size_t total = 0;
    for (uint64_t i = 0; i < count; ++i) {
        std::string name = read_string_bounded(is, 4096);
        const uint32_t ndim = read_le<uint32_t>(is);
        require(ndim >= 1 && ndim <= 8, ErrorKind::Format,
                "checkpoint: implausible rank for " + name);
        std::vector<int> shape(ndim);
        for (auto& d : shape) {
            d = read_le<int32_t>(is);
            require(d >= 1 && d <= (1 << 24), ErrorKind::Format,
                    "checkpoint: implausible dim for " + name);
        }
        Tensor<float> t(shape);
        total += t.numel();
        require(total <= (size_t(1) << 31), ErrorKind::Format,
                "checkpoint: implausible total size");
        read_tensor_data(is, t);
        ck.weights.emplace_back(std::move(name), std::move(t));
    }

    const uint8_t has_opt = read_le<uint8_t>(is);
    require(has_opt <= 1, ErrorKind::Format, "checkpoint: bad optimizer flag");
    ck.has_optimizer = has_opt != 0;
    if (ck.has_optimizer) {
        for (auto* moments : {&ck.moment1, &ck.moment2}) {
            moments->reserve(ck.weights.size());
            for (const auto& [name, t] : ck.weights) {
                (void)name;
                Tensor<float> m(t.shape);
                read_tensor_data(is, m);
                moments->push_back(std::move(m));
            }
        }
    }

    expect_bytes(is, kTrailer, 4, "trailer");
    require(is.peek() == std::ifstream::traits_type::eof(), ErrorKind::Format,
            "checkpoint: trailing bytes after trailer");
    return ck;
}

Checkpoint snapshot(const TrainConfig& config, int64_t step, const Model<float>& model,
                    const AdamW<float>* opt, const std::string& rng_state) {
    Checkpoint ck;
    ck.config = config;
    ck.step = step;
    ck.num_views = model.num_views();
    ck.map_spec = model.map_spec();
    ck.map_channels = model.map_channels();
    ck.init_seed = model.init_seed();
    ck.vocab_words = model.vocab().words();
    ck.vocab_max_len = model.vocab().max_len();
    ck.class_names = model.class_names();
    for (const auto& p : model.params().all())
        ck.weights.emplace_back(p->name, p->value);
    if (opt != nullptr) {
        ck.has_optimizer = true;
        ck.moment1 = opt->moment1();
        ck.moment2 = opt->moment2();
        ck.opt_step = opt->serialized_step();
    }
    ck.rng_state = rng_state;
    return ck;
}

std::unique_ptr<Model<float>> build_model(const Checkpoint& ck) {
    const Vocabulary vocab =
        Vocabulary::from_words(ck.vocab_words, ck.vocab_max_len);
    auto model = std::make_unique<Model<float>>(ck.config.model, vocab,
                                                ck.class_names, ck.num_views,
                                                ck.map_spec, ck.map_channels,
                                                ck.init_seed);
    const auto& params = model->params().all();
    require(params.size() == ck.weights.size(), ErrorKind::Format,
            "checkpoint holds " + std::to_string(ck.weights.size()) +
                " parameters but the model defines " + std::to_string(params.size()));
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& [name, t] = ck.weights[i];
        require(params[i]->name == name, ErrorKind::Format,
                "checkpoint parameter order mismatch at \"" + name + "\"");
        require(params[i]->value.shape == t.shape, ErrorKind::Format,
                "checkpoint shape mismatch for \"" + name + "\"");
        params[i]->value = t;
    }
    return model;
}

void apply_optimizer_state(const Checkpoint& ck, const Model<float>& model,
                           AdamW<float>& opt) {
    require(ck.has_optimizer, ErrorKind::Format,
            "checkpoint carries no optimizer state");
    const auto& params = model.params().all();
    require(ck.moment1.size() == params.size() && ck.moment2.size() == params.size(),
            ErrorKind::Format, "optimizer state does not match the model");
    for (size_t i = 0; i < params.size(); ++i) {
        require(ck.moment1[i].shape == params[i]->value.shape &&
                    ck.moment2[i].shape == params[i]->value.shape,
                ErrorKind::Format, "optimizer moment shape mismatch");
        opt.moment1()[i] = ck.moment1[i];
        opt.moment2()[i] = ck.moment2[i];
    }
    opt.set_step(ck.opt_step);
}

}  // namespace dg
