#include <doctest.h>

#include <filesystem>
#include <string>

#include <unistd.h>

#include "crispe/error.hpp"
#include "crispe/serialize.hpp"
#include "support.hpp"

using namespace crispe;
using namespace crispe::testing;
namespace fs = std::filesystem;

namespace {

bool same_model(const CurvatureModel& a, const CurvatureModel& b) {
    return encode_curvature(a) == encode_curvature(b) && a.kind() == b.kind() && a.layers() == b.layers();
}

std::string parse_error(std::string_view bytes, bool checkpoint) {
    try {
        if (checkpoint)
            decode_checkpoint(bytes);
        else
            decode_curvature(bytes);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Parse);
        return e.what();
    }
    FAIL("expected a parse error");
    return {};
}

} // namespace

TEST_SUITE("serialize") {

TEST_CASE("curvature round trip for every kind") {
    Rng rng(81);
    const auto net = FeedForwardNet::random({3, 4, 2}, Activation::Tanh, 1);
    const auto cap = random_dataset(rng, 15, 3, 2);
    EstimateOptions eo;
    eo.seed = 4;
    for (auto kind : {CurvatureKind::ExactHessian, CurvatureKind::Gnh, CurvatureKind::Kfac, CurvatureKind::Ekfac,
                      CurvatureKind::ActivationCov}) {
        CAPTURE(to_string(kind));
        const auto model = estimate_curvature(kind, net, cap, eo);
        const std::string bytes = encode_curvature(model);
        CHECK(bytes.substr(0, 4) == "CRVC");
        const auto back = decode_curvature(bytes);
        CHECK(back.kind() == kind);
        CHECK(encode_curvature(back) == bytes);
        CHECK(same_model(model, back));
    }
}

TEST_CASE("tracked subsets survive the round trip") {
    Rng rng(82);
    const auto net = FeedForwardNet::random({3, 4, 4, 2}, Activation::Relu, 2);
    EstimateOptions eo;
    eo.layers = {2};
    const auto model = kfac_estimate(net, random_dataset(rng, 10, 3, 2), eo);
    const auto back = decode_curvature(encode_curvature(model));
    CHECK(back.layers() == std::vector<std::size_t>{2});
    const auto& f = std::get<KfacModel>(back.data).factors.layers[0];
    const auto& g = std::get<KfacModel>(model.data).factors.layers[0];
    CHECK(f.a == g.a);
    CHECK(f.s == g.s);
    CHECK(f.sample_count == g.sample_count);
}

TEST_CASE("curvature files") {
    Rng rng(83);
    const auto net = FeedForwardNet::random({3, 2}, Activation::Identity, 3);
    const auto model = activation_covariance(net, random_dataset(rng, 5, 3, 2));
    const fs::path path = fs::temp_directory_path() / ("crispe-crvc-" + std::to_string(::getpid()));
    write_curvature(model, path);
    CHECK(same_model(read_curvature(path), model));
    fs::remove(path);
    try {
        read_curvature(path);
        FAIL("expected io error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Io);
    }
}

TEST_CASE("curvature parse errors name the offset") {
    Rng rng(84);
    const auto net = FeedForwardNet::random({3, 2}, Activation::Identity, 4);
    EstimateOptions eo;
    const std::string bytes = encode_curvature(kfac_estimate(net, random_dataset(rng, 5, 3, 2), eo));

    std::string bad = bytes;
    bad[0] = 'X';
    CHECK(parse_error(bad, false).find("magic") != std::string::npos);
    for (std::size_t cut : {std::size_t{2}, std::size_t{10}, bytes.size() - 1}) {
        const auto msg = parse_error(std::string_view(bytes).substr(0, cut), false);
        CHECK(msg.find("truncated") != std::string::npos);
        CHECK(msg.find("offset") != std::string::npos);
    }
    CHECK(parse_error(bytes + "xy", false).find("2 trailing bytes") != std::string::npos);
    bad = bytes;
    bad[4] = 9;
    CHECK(parse_error(bad, false).find("version") != std::string::npos);
}

TEST_CASE("checkpoint round trip") {
    for (auto act : {Activation::Relu, Activation::Tanh, Activation::Identity}) {
        const auto net = FeedForwardNet::random({5, 3, 4, 2}, act, 5);
        const std::string bytes = encode_checkpoint(net);
        CHECK(bytes.substr(0, 4) == "CRSP");
        CHECK(bit_equal(decode_checkpoint(bytes), net));
    }
    const auto net = FeedForwardNet::random({2, 2}, Activation::Relu, 6);
    const fs::path path = fs::temp_directory_path() / ("crispe-crsp-" + std::to_string(::getpid()));
    write_checkpoint(net, path);
    CHECK(bit_equal(read_checkpoint(path), net));
    fs::remove(path);
}

TEST_CASE("checkpoint parse errors") {
    const std::string bytes = encode_checkpoint(FeedForwardNet::random({2, 3, 2}, Activation::Tanh, 7));
    std::string bad = bytes;
    bad[1] = 'X';
    CHECK(parse_error(bad, true).find("magic") != std::string::npos);
    CHECK(parse_error(std::string_view(bytes).substr(0, 30), true).find("offset") != std::string::npos);
    CHECK(parse_error(bytes + "z", true).find("trailing") != std::string::npos);
    bad = bytes;
    bad[20] = 7; // activation tag of the first layer
    CHECK(parse_error(bad, true).find("activation") != std::string::npos);
    bad = bytes;
    bad[8] = 0;
    CHECK(parse_error(bad, true).find("zero layers") != std::string::npos);
}

}
