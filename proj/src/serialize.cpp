#include "crispe/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "crispe/error.hpp"

namespace crispe {

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

namespace {

constexpr std::uint32_t kEkfacFlag = 1u;
constexpr std::uint32_t kDenseFlag = 2u;

class Writer {
public:
    template <typename T>
    void put(T value) {
        char raw[sizeof(T)];
        std::memcpy(raw, &value, sizeof(T));
        out_.append(raw, sizeof(T));
    }
    void magic(const char* m) { out_.append(m, 4); }
    void matrix(const Matrix& m) { out_.append(reinterpret_cast<const char*>(m.data()), sizeof(double) * static_cast<std::size_t>(m.size())); }
    void zeros(std::size_t count) { out_.append(sizeof(double) * count, '\0'); }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    Reader(std::string_view bytes, const char* what) : bytes_(bytes), what_(what) {}

    template <typename T>
    T get(const char* field) {
        need(sizeof(T), field);
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }
    void magic(const char* expected) {
        need(4, "magic");
        if (std::memcmp(bytes_.data(), expected, 4) != 0)
            fail(ErrorKind::Parse, std::string(what_) + ": bad magic at byte offset 0 (expected \"" + expected + "\")");
        pos_ = 4;
    }
    Matrix matrix(Eigen::Index rows, Eigen::Index cols, const char* field) {
        const std::size_t n = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
        need(n * sizeof(double), field);
        Matrix m(rows, cols);
        std::memcpy(m.data(), bytes_.data() + pos_, n * sizeof(double));
        pos_ += n * sizeof(double);
        return m;
    }
    void finish() {
        if (pos_ != bytes_.size())
            fail(ErrorKind::Parse, std::string(what_) + ": " + std::to_string(bytes_.size() - pos_) +
                                       " trailing bytes at byte offset " + std::to_string(pos_));
    }
    std::size_t offset() const { return pos_; }

private:
    void need(std::size_t n, const char* field) {
        if (bytes_.size() - pos_ < n)
            fail(ErrorKind::Parse, std::string(what_) + ": truncated while reading " + field + " at byte offset " +
                                       std::to_string(pos_) + " (need " + std::to_string(n) + " bytes, have " +
                                       std::to_string(bytes_.size() - pos_) + ")");
    }

    std::string_view bytes_;
    const char* what_;
    std::size_t pos_ = 0;
};

std::uint32_t kind_tag(CurvatureKind kind) {
    switch (kind) {
    case CurvatureKind::Kfac: return 0;
    case CurvatureKind::Ekfac: return 1;
    case CurvatureKind::ActivationCov: return 2;
    case CurvatureKind::Gnh: return 3;
    case CurvatureKind::ExactHessian: return 4;
    }
    return 0;
}

CurvatureKind kind_from_tag(std::uint32_t tag, std::size_t offset) {
    switch (tag) {
    case 0: return CurvatureKind::Kfac;
    case 1: return CurvatureKind::Ekfac;
    case 2: return CurvatureKind::ActivationCov;
    case 3: return CurvatureKind::Gnh;
    case 4: return CurvatureKind::ExactHessian;
    default:
        fail(ErrorKind::Parse, "curvature cache: unknown kind tag " + std::to_string(tag) + " at byte offset " +
                                   std::to_string(offset));
    }
}

std::uint32_t narrow(Eigen::Index v, const char* what) {
    require(v >= 0 && v <= static_cast<Eigen::Index>(UINT32_MAX), ErrorKind::Size, std::string(what) + " does not fit in u32");
    return static_cast<std::uint32_t>(v);
}

const KfacFactors* factors_of(const CurvatureModel& model) {
    if (const auto* m = std::get_if<KfacModel>(&model.data)) return &m->factors;
    if (const auto* m = std::get_if<EkfacModel>(&model.data)) return &m->factors;
    if (const auto* m = std::get_if<ActivationCovModel>(&model.data)) return &m->factors;
    return nullptr;
}

const DenseCurvature* dense_of(const CurvatureModel& model) {
    if (const auto* m = std::get_if<ExactHessianModel>(&model.data)) return &m->dense;
    if (const auto* m = std::get_if<GnhModel>(&model.data)) return &m->dense;
    return nullptr;
}

} // namespace

std::string encode_curvature(const CurvatureModel& model) {
    Writer w;
    const auto* factors = factors_of(model);
    const auto* dense = dense_of(model);
    const auto* ekfac = std::get_if<EkfacModel>(&model.data);
    const auto shapes = model.shapes();

    std::uint32_t flags = 0;
    if (ekfac != nullptr) flags |= kEkfacFlag;
    if (dense != nullptr) flags |= kDenseFlag;

    w.magic("CRVC");
    w.put<std::uint32_t>(kCurvatureFormatVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(shapes.size()));
    w.put<std::uint32_t>(kind_tag(model.kind()));
    w.put<std::uint32_t>(flags);

    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const auto& s = shapes[i];
        w.put<std::uint32_t>(static_cast<std::uint32_t>(s.layer));
        w.put<std::uint32_t>(narrow(s.d_in, "d_in"));
        w.put<std::uint32_t>(narrow(s.d_out, "d_out"));
        if (factors != nullptr) {
            const auto& f = factors->layers[i];
            w.put<std::uint64_t>(f.sample_count);
            w.matrix(f.a);
            w.matrix(f.s);
        } else {
            w.put<std::uint64_t>(dense->sample_count);
            w.zeros(static_cast<std::size_t>(s.d_in * s.d_in + s.d_out * s.d_out));
        }
    }
    if (ekfac != nullptr) {
        for (const auto& c : ekfac->corrections) {
            w.matrix(c.corrected);
            w.matrix(c.u_out);
            w.matrix(c.u_in);
        }
    }
    if (dense != nullptr) {
        w.put<std::uint64_t>(static_cast<std::uint64_t>(dense->matrix.rows()));
        w.matrix(dense->matrix);
        const auto* h = std::get_if<ExactHessianModel>(&model.data);
        w.put<double>(h != nullptr ? h->asymmetry : 0.0);
    }
    return w.take();
}

CurvatureModel decode_curvature(std::string_view bytes) {
    Reader r(bytes, "curvature cache");
    r.magic("CRVC");
    const auto version_at = r.offset();
    const auto version = r.get<std::uint32_t>("version");
    require(version == kCurvatureFormatVersion, ErrorKind::Parse,
            "curvature cache: unsupported version " + std::to_string(version) + " at byte offset " + std::to_string(version_at));
    const auto count = r.get<std::uint32_t>("layer count");
    const auto kind_at = r.offset();
    const CurvatureKind kind = kind_from_tag(r.get<std::uint32_t>("kind"), kind_at);
    const auto flags = r.get<std::uint32_t>("flags");
    const bool has_dense = (kind == CurvatureKind::Gnh || kind == CurvatureKind::ExactHessian);
    require(((flags & kEkfacFlag) != 0) == (kind == CurvatureKind::Ekfac) && ((flags & kDenseFlag) != 0) == has_dense,
            ErrorKind::Parse, "curvature cache: flags do not match kind at byte offset " + std::to_string(kind_at + 4));

    KfacFactors factors;
    std::vector<LayerShape> shapes;
    std::uint64_t dense_count = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        KfacLayerFactors f;
        f.layer = r.get<std::uint32_t>("layer index");
        const Eigen::Index d_in = r.get<std::uint32_t>("d_in");
        const Eigen::Index d_out = r.get<std::uint32_t>("d_out");
        f.sample_count = r.get<std::uint64_t>("sample_count");
        f.a = r.matrix(d_in, d_in, "A factor");
        f.s = r.matrix(d_out, d_out, "S factor");
        shapes.push_back({f.layer, d_out, d_in});
        dense_count = f.sample_count;
        factors.layers.push_back(std::move(f));
    }

    CurvatureModel model;
    if (kind == CurvatureKind::Kfac) {
        model.data = KfacModel{std::move(factors)};
    } else if (kind == CurvatureKind::ActivationCov) {
        model.data = ActivationCovModel{std::move(factors)};
    } else if (kind == CurvatureKind::Ekfac) {
        EkfacModel m;
        for (const auto& s : shapes) {
            EkfacLayer c;
            c.layer = s.layer;
            c.corrected = r.matrix(s.d_out, s.d_in, "EK-FAC eigenvalues");
            c.u_out = r.matrix(s.d_out, s.d_out, "EK-FAC output basis");
            c.u_in = r.matrix(s.d_in, s.d_in, "EK-FAC input basis");
            m.corrections.push_back(std::move(c));
        }
        m.factors = std::move(factors);
        model.data = std::move(m);
    } else {
        const auto dim_at = r.offset();
        const auto dim = r.get<std::uint64_t>("dense dimension");
        Eigen::Index expected = 0;
        for (const auto& s : shapes) expected += s.d_out * s.d_in;
        require(dim == static_cast<std::uint64_t>(expected), ErrorKind::Parse,
                "curvature cache: dense dimension " + std::to_string(dim) + " does not match layer shapes at byte offset " +
                    std::to_string(dim_at));
        DenseCurvature dense{shapes, r.matrix(expected, expected, "dense curvature"), dense_count};
        const double asymmetry = r.get<double>("asymmetry");
        if (kind == CurvatureKind::ExactHessian)
            model.data = ExactHessianModel{std::move(dense), asymmetry};
        else
            model.data = GnhModel{std::move(dense)};
    }
    r.finish();
    return model;
}

std::string encode_checkpoint(const FeedForwardNet& net) {
    Writer w;
    w.magic("CRSP");
    w.put<std::uint32_t>(kCheckpointFormatVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(net.layer_count()));
    for (const auto& layer : net.layers()) {
        w.put<std::uint32_t>(narrow(layer.weights.rows(), "d_out"));
        w.put<std::uint32_t>(narrow(layer.weights.cols(), "d_in"));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(layer.activation));
        w.matrix(layer.weights);
    }
    return w.take();
}

FeedForwardNet decode_checkpoint(std::string_view bytes) {
    Reader r(bytes, "checkpoint");
    r.magic("CRSP");
    const auto version_at = r.offset();
    const auto version = r.get<std::uint32_t>("version");
    require(version == kCheckpointFormatVersion, ErrorKind::Parse,
            "checkpoint: unsupported version " + std::to_string(version) + " at byte offset " + std::to_string(version_at));
    const auto count = r.get<std::uint32_t>("layer count");
    require(count > 0, ErrorKind::Parse, "checkpoint: zero layers at byte offset 8");
    std::vector<DenseLayer> layers;
    for (std::uint32_t i = 0; i < count; ++i) {
        const Eigen::Index rows = r.get<std::uint32_t>("d_out");
        const Eigen::Index cols = r.get<std::uint32_t>("d_in");
        const auto act_at = r.offset();
        const auto act = r.get<std::uint32_t>("activation");
        require(act <= static_cast<std::uint32_t>(Activation::Identity), ErrorKind::Parse,
                "checkpoint: unknown activation tag " + std::to_string(act) + " at byte offset " + std::to_string(act_at));
        DenseLayer layer;
        layer.activation = static_cast<Activation>(act);
        layer.weights = r.matrix(rows, cols, "weights");
        layers.push_back(std::move(layer));
    }
    r.finish();
    try {
        return FeedForwardNet(std::move(layers));
    } catch (const Error& e) {
        fail(ErrorKind::Parse, std::string("checkpoint: ") + e.what());
    }
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    require(!in.bad(), ErrorKind::Io, "read failed for " + path.string());
    return bytes;
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path.string());
}

void write_curvature(const CurvatureModel& model, const std::filesystem::path& path) {
    write_file(path, encode_curvature(model));
}

CurvatureModel read_curvature(const std::filesystem::path& path) {
    return decode_curvature(read_file(path));
}

void write_checkpoint(const FeedForwardNet& net, const std::filesystem::path& path) {
    write_file(path, encode_checkpoint(net));
}

FeedForwardNet read_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(read_file(path));
}

} // namespace crispe
