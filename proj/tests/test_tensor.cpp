#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "omnict/tensor.hpp"

namespace {

using omnict::FormatError;
using omnict::IoError;
using omnict::Prng;
using omnict::Tensor;
using omnict::ValidationError;

std::filesystem::path temp_file(const char* name) {
    return std::filesystem::temp_directory_path() / name;
}

TEST(Tensor, ShapeAndStrides) {
    Tensor t = Tensor::zeros({2, 3, 4});
    EXPECT_EQ(t.rank(), 3);
    EXPECT_EQ(t.numel(), 24);
    EXPECT_EQ(t.extent(0), 2);
    EXPECT_EQ(t.extent(2), 4);
    EXPECT_EQ(t.strides(), (std::vector<std::int64_t>{12, 4, 1}));
    EXPECT_EQ(t.offset({0, 0, 0}), 0);
    EXPECT_EQ(t.offset({1, 2, 3}), 23);
    EXPECT_EQ(t.offset({1, 0, 2}), 14);
}

TEST(Tensor, RowMajorLastIndexFastest) {
    Tensor t = Tensor::zeros({2, 3});
    t.at({0, 1}) = 5.0f;
    EXPECT_EQ(t.data[1], 5.0f);
    t.at({1, 0}) = 7.0f;
    EXPECT_EQ(t.data[3], 7.0f);
}

TEST(Tensor, FilledAndZeros) {
    Tensor z = Tensor::zeros({4});
    for (float v : z.data) EXPECT_EQ(v, 0.0f);
    Tensor f = Tensor::filled({2, 2}, 1.5f);
    for (float v : f.data) EXPECT_EQ(v, 1.5f);
}

TEST(Tensor, InvalidShapes) {
    EXPECT_THROW(Tensor::zeros({}), ValidationError);
    EXPECT_THROW(Tensor::zeros({0}), ValidationError);
    EXPECT_THROW(Tensor::zeros({2, -1}), ValidationError);
}

TEST(Tensor, IndexValidation) {
    Tensor t = Tensor::zeros({2, 3});
    EXPECT_THROW(t.offset({2, 0}), ValidationError);
    EXPECT_THROW(t.offset({0, 3}), ValidationError);
    EXPECT_THROW(t.offset({-1, 0}), ValidationError);
    EXPECT_THROW(t.offset({0}), ValidationError);
}

TEST(Prng, SplitMix64KnownSequence) {
    // Reference sequence for seed 0, computed independently.
    Prng rng(0);
    EXPECT_EQ(rng.next_u64(), 0xE220A8397B1DCDAFULL);
    EXPECT_EQ(rng.next_u64(), 0x6E789E6AA1B965F4ULL);
    EXPECT_EQ(rng.next_u64(), 0x06C45D188009454FULL);
    EXPECT_EQ(rng.next_u64(), 0xF88BB8A8724C81ECULL);
    EXPECT_EQ(rng.next_u64(), 0x1B39896A51A8749BULL);
}

TEST(Prng, NextDoubleTopBits) {
    Prng rng(0);
    EXPECT_DOUBLE_EQ(rng.next_double(), 0.8833108082136426);
}

TEST(Prng, SameSeedSameStream) {
    Prng a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Prng, UniformBounds) {
    Prng rng(3);
    for (int i = 0; i < 10000; ++i) {
        const double v = rng.uniform1(-0.25, 0.25);
        EXPECT_GE(v, -0.25);
        EXPECT_LT(v, 0.25);
    }
    auto vec = rng.uniform(1000, -1.0f, 1.0f);
    for (float v : vec) {
        EXPECT_GE(v, -1.0f);
        EXPECT_LT(v, 1.0f);
    }
    EXPECT_THROW(rng.uniform1(1.0, 1.0), ValidationError);
}

TEST(Omct, RoundTripBitExact) {
    const auto path = temp_file("omct_roundtrip.omct");
    Tensor t = Tensor::zeros({3, 5});
    Prng rng(9);
    for (auto& v : t.data) v = static_cast<float>(rng.uniform1(-100.0, 100.0));
    t.data[0] = 0.1f;  // not exactly representable in decimal; bit-exactness matters
    t.data[1] = -0.0f;
    omnict::tensor_write(t, path);
    Tensor u = omnict::tensor_read(path);
    EXPECT_EQ(u.shape, t.shape);
    ASSERT_EQ(u.data.size(), t.data.size());
    for (std::size_t i = 0; i < t.data.size(); ++i)
        EXPECT_EQ(std::bit_cast<std::uint32_t>(u.data[i]), std::bit_cast<std::uint32_t>(t.data[i]));
    std::filesystem::remove(path);
}

TEST(Omct, HeaderLayout) {
    const auto path = temp_file("omct_header.omct");
    omnict::tensor_write(Tensor::filled({2}, 1.0f), path);
    std::ifstream in(path, std::ios::binary);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ASSERT_GE(buf.size(), 12u);
    EXPECT_EQ(std::string(buf.begin(), buf.begin() + 8), "OMCT0001");
    const std::uint32_t hlen = static_cast<std::uint32_t>(buf[8]) | (static_cast<std::uint32_t>(buf[9]) << 8) |
                               (static_cast<std::uint32_t>(buf[10]) << 16) |
                               (static_cast<std::uint32_t>(buf[11]) << 24);
    EXPECT_EQ(buf.size(), 12u + hlen + 2 * 4);
    const std::string header(buf.begin() + 12, buf.begin() + 12 + hlen);
    EXPECT_NE(header.find("\"dtype\":\"f32\""), std::string::npos);
    EXPECT_NE(header.find("\"order\":\"C\""), std::string::npos);
    EXPECT_NE(header.find("\"shape\":[2]"), std::string::npos);
    // payload: 1.0f little-endian = 00 00 80 3F
    EXPECT_EQ(buf[12 + hlen + 0], 0x00);
    EXPECT_EQ(buf[12 + hlen + 1], 0x00);
    EXPECT_EQ(buf[12 + hlen + 2], 0x80);
    EXPECT_EQ(buf[12 + hlen + 3], 0x3F);
    std::filesystem::remove(path);
}

TEST(Omct, MissingFile) {
    EXPECT_THROW(omnict::tensor_read("/nonexistent/dir/x.omct"), IoError);
}

TEST(Omct, BadMagic) {
    const auto path = temp_file("omct_badmagic.omct");
    std::ofstream(path, std::ios::binary) << "NOPE0001garbage";
    EXPECT_THROW(omnict::tensor_read(path), FormatError);
    std::filesystem::remove(path);
}

TEST(Omct, TruncatedPayload) {
    const auto path = temp_file("omct_trunc.omct");
    omnict::tensor_write(Tensor::filled({4}, 2.0f), path);
    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 4);
    EXPECT_THROW(omnict::tensor_read(path), FormatError);
    std::filesystem::remove(path);
}

TEST(Omct, OversizedPayload) {
    const auto path = temp_file("omct_extra.omct");
    omnict::tensor_write(Tensor::filled({4}, 2.0f), path);
    std::ofstream(path, std::ios::binary | std::ios::app) << "extra";
    EXPECT_THROW(omnict::tensor_read(path), FormatError);
    std::filesystem::remove(path);
}

TEST(Omct, BadHeaderJson) {
    const auto path = temp_file("omct_badjson.omct");
    std::vector<unsigned char> buf = {'O', 'M', 'C', 'T', '0', '0', '0', '1', 3, 0, 0, 0, '{', 'x', '}'};
    std::ofstream(path, std::ios::binary).write(reinterpret_cast<char*>(buf.data()),
                                                static_cast<std::streamsize>(buf.size()));
    EXPECT_THROW(omnict::tensor_read(path), FormatError);
    std::filesystem::remove(path);
}

TEST(Omct, WrongDtypeRejected) {
    const auto path = temp_file("omct_dtype.omct");
    const std::string header = R"({"dtype":"f64","order":"C","shape":[1]})";
    std::vector<unsigned char> buf(8 + 4 + header.size() + 4, 0);
    std::memcpy(buf.data(), "OMCT0001", 8);
    buf[8] = static_cast<unsigned char>(header.size());
    std::memcpy(buf.data() + 12, header.data(), header.size());
    std::ofstream(path, std::ios::binary).write(reinterpret_cast<char*>(buf.data()),
                                                static_cast<std::streamsize>(buf.size()));
    EXPECT_THROW(omnict::tensor_read(path), FormatError);
    std::filesystem::remove(path);
}

}  // namespace
