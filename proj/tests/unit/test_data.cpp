#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>

#include "kinf/data.hpp"
#include "kinf/errors.hpp"

namespace fs = std::filesystem;
using namespace kinf;

namespace {

fs::path temp_path(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "kinf_test_data";
    fs::create_directories(dir);
    return dir / name;
}

void put_be32(std::ofstream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

// hand-written 4-image, 2x2 fixture
void write_fixture(const fs::path& img, const fs::path& lab, std::uint32_t label_magic = 0x00000801) {
    std::ofstream i(img, std::ios::binary);
    put_be32(i, 0x00000803);
    put_be32(i, 4);
    put_be32(i, 2);
    put_be32(i, 2);
    const unsigned char px[16] = {0, 255, 128, 0, 255, 255, 255, 255, 1, 2, 3, 4, 0, 0, 0, 0};
    i.write(reinterpret_cast<const char*>(px), 16);
    std::ofstream l(lab, std::ios::binary);
    put_be32(l, label_magic);
    put_be32(l, 4);
    const unsigned char labels[4] = {7, 1, 7, 3};
    l.write(reinterpret_cast<const char*>(labels), 4);
}

}  // namespace

TEST(LoadIdx, FourImageFixture) {
    const auto img = temp_path("fx-images"), lab = temp_path("fx-labels");
    write_fixture(img, lab);
    const LabeledDataset ds = load_idx(img, lab);
    EXPECT_EQ(ds.size(), 4);
    EXPECT_EQ(ds.input_dim(), 4);
    EXPECT_DOUBLE_EQ(ds.features(0, 1), 1.0);
    EXPECT_DOUBLE_EQ(ds.features(0, 2), 128.0 / 255.0);
    EXPECT_DOUBLE_EQ(ds.features(2, 3), 4.0 / 255.0);
    // classes observed: 1, 3, 7
    EXPECT_EQ(ds.output_dim(), 3);
    EXPECT_EQ(ds.labels, (std::vector<int>{7, 1, 7, 3}));
    EXPECT_DOUBLE_EQ(ds.targets(0, 2), 1.0);
    EXPECT_DOUBLE_EQ(ds.targets(1, 0), 1.0);
    for (Index r = 0; r < ds.size(); ++r) EXPECT_DOUBLE_EQ(ds.targets.row(r).sum(), 1.0);
}

TEST(LoadIdx, BadLabelMagic) {
    const auto img = temp_path("bm-images"), lab = temp_path("bm-labels");
    write_fixture(img, lab, 0x00000802);
    EXPECT_THROW(load_idx(img, lab), BadMagic);
}

TEST(LoadIdx, TruncatedPixels) {
    const auto img = temp_path("tr-images"), lab = temp_path("tr-labels");
    write_fixture(img, lab);
    fs::resize_file(img, fs::file_size(img) - 3);
    EXPECT_THROW(load_idx(img, lab), TruncatedFile);
}

TEST(LoadIdx, CountMismatch) {
    const auto img = temp_path("cm-images"), lab = temp_path("cm-labels");
    write_fixture(img, lab);
    std::ofstream l(lab, std::ios::binary);
    put_be32(l, 0x00000801);
    put_be32(l, 3);
    const unsigned char labels[3] = {1, 2, 3};
    l.write(reinterpret_cast<const char*>(labels), 3);
    l.close();
    EXPECT_THROW(load_idx(img, lab), CountMismatch);
}

TEST(LoadIdx, WriteReadRoundTrip) {
    const LabeledDataset ds = make_blobs(3, 7, 6, 0.2, 11);
    // quantise to bytes first so the round trip can be exact
    LabeledDataset q = ds;
    q.features = (ds.features * 255.0).array().round() / 255.0;
    const auto img = temp_path("rt-images"), lab = temp_path("rt-labels");
    write_idx(q, 2, 3, img, lab);
    const LabeledDataset back = load_idx(img, lab);
    EXPECT_EQ(back.labels, q.labels);
    EXPECT_TRUE(back.features == q.features);
}

TEST(LoadIdx, RealMnistWhenPresent) {
    const fs::path dir = data_dir();
    const fs::path img = dir / "t10k-images-idx3-ubyte", lab = dir / "t10k-labels-idx1-ubyte";
    if (!fs::exists(img) || !fs::exists(lab)) GTEST_SKIP() << "MNIST test split not present in " << dir;
    const LabeledDataset ds = load_idx(img, lab);
    EXPECT_EQ(ds.size(), 10000);
    EXPECT_EQ(ds.input_dim(), 784);
    EXPECT_EQ(ds.output_dim(), 10);
}

TEST(LoadCifar, TwoRecords) {
    const auto path = temp_path("cifar2.bin");
    {
        std::ofstream out(path, std::ios::binary);
        for (int r = 0; r < 2; ++r) {
            const char label = static_cast<char>(r == 0 ? 6 : 9);
            out.write(&label, 1);
            std::string px(3072, static_cast<char>(r == 0 ? 0 : 255));
            out.write(px.data(), 3072);
        }
    }
    const LabeledDataset ds = load_cifar_binary(path);
    EXPECT_EQ(ds.size(), 2);
    EXPECT_EQ(ds.input_dim(), 3072);
    EXPECT_DOUBLE_EQ(ds.features(1, 100), 1.0);
    EXPECT_DOUBLE_EQ(ds.features(0, 100), 0.0);
    EXPECT_EQ(ds.labels, (std::vector<int>{6, 9}));
}

TEST(LoadCifar, TruncatedLength) {
    const auto path = temp_path("cifar-bad.bin");
    {
        std::ofstream out(path, std::ios::binary);
        std::string bytes(6147, '\0');
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    EXPECT_THROW(load_cifar_binary(path), TruncatedFile);
}

TEST(SubsetPerClass, ExactCountsAndDeterminism) {
    const LabeledDataset ds = make_blobs(4, 30, 5, 0.1, 3);
    const LabeledDataset a = subset_per_class(ds, {3, 1}, 10, 42);
    const LabeledDataset b = subset_per_class(ds, {3, 1}, 10, 42);
    EXPECT_EQ(a.size(), 20);
    EXPECT_EQ(a.output_dim(), 2);
    EXPECT_EQ(std::count(a.labels.begin(), a.labels.end(), 3), 10);
    EXPECT_EQ(std::count(a.labels.begin(), a.labels.end(), 1), 10);
    EXPECT_TRUE(a.features == b.features);
    EXPECT_EQ(a.labels, b.labels);
    const LabeledDataset c = subset_per_class(ds, {3, 1}, 10, 43);
    EXPECT_FALSE(a.features == c.features);
}

TEST(SubsetPerClass, Errors) {
    const LabeledDataset ds = make_blobs(2, 5, 3, 0.1, 3);
    EXPECT_THROW(subset_per_class(ds, {0}, 6, 1), InsufficientClassMembers);
    EXPECT_THROW(subset_per_class(ds, {0, 1}, 0, 1), EmptyDataset);
}

TEST(SubsetPerClass, PlusMinusOneEncoding) {
    const LabeledDataset ds = make_blobs(3, 10, 3, 0.1, 5);
    const LabeledDataset s = subset_per_class(ds, {2, 0}, 4, 9, TargetEncoding::plus_minus_one);
    EXPECT_EQ(s.output_dim(), 1);
    for (Index i = 0; i < s.size(); ++i) {
        EXPECT_DOUBLE_EQ(s.targets(i, 0), s.labels[static_cast<std::size_t>(i)] == 2 ? 1.0 : -1.0);
    }
}

TEST(SplitForget, HalfOfAll) {
    const LabeledDataset ds = make_blobs(2, 1000, 4, 0.1, 8);
    const SplitDataset split = split_forget(ds, 50.0, RemovalScope::all(), 1);
    EXPECT_EQ(split.forget_count, 1000);
    EXPECT_EQ(split.retain_count(), 1000);
}

TEST(SplitForget, DegenerateSplits) {
    const LabeledDataset ds = make_blobs(2, 10, 4, 0.1, 8);
    EXPECT_THROW(split_forget(ds, 100.0, RemovalScope::all(), 1), DegenerateSplit);
    EXPECT_THROW(split_forget(ds, 0.0, RemovalScope::all(), 1), DegenerateSplit);
}

TEST(SplitForget, SingleClassScope) {
    const LabeledDataset ds = make_blobs(2, 1000, 4, 0.1, 8);
    const SplitDataset split = split_forget(ds, 10.0, RemovalScope::single(0), 5);
    EXPECT_EQ(split.forget_count, 100);
    for (Index i = 0; i < split.forget_count; ++i) EXPECT_EQ(split.full.labels[static_cast<std::size_t>(i)], 0);
}

TEST(SplitForget, PermutationPreservesRows) {
    const LabeledDataset ds = make_blobs(3, 20, 4, 0.1, 2);
    const SplitDataset split = split_forget(ds, 30.0, RemovalScope::all(), 77);
    auto rows = [](const LabeledDataset& d) {
        std::vector<std::vector<double>> out;
        for (Index i = 0; i < d.size(); ++i) {
            std::vector<double> r;
            for (Index j = 0; j < d.input_dim(); ++j) r.push_back(d.features(i, j));
            r.push_back(d.labels[static_cast<std::size_t>(i)]);
            out.push_back(r);
        }
        std::sort(out.begin(), out.end());
        return out;
    };
    EXPECT_EQ(rows(ds), rows(split.full));
    for (Index i = 0; i < split.full.size(); ++i) {
        EXPECT_TRUE(split.full.features.row(i) == ds.features.row(split.permutation[static_cast<std::size_t>(i)]));
    }
}

TEST(SplitForget, SingleClassKeepsRelativeOrder) {
    const LabeledDataset ds = make_blobs(2, 15, 3, 0.1, 4);
    const SplitDataset split = split_forget(ds, 20.0, RemovalScope::single(1), 3);
    const auto& perm = split.permutation;
    EXPECT_TRUE(std::is_sorted(perm.begin(), perm.begin() + split.forget_count));
    EXPECT_TRUE(std::is_sorted(perm.begin() + split.forget_count, perm.end()));
}

TEST(Dataset, ValidateRejectsBadTargets) {
    LabeledDataset ds = make_blobs(2, 3, 2, 0.1, 4);
    ds.targets(0, 0) = 0.5;
    EXPECT_THROW(ds.validate(), Error);
    LabeledDataset ds2 = make_blobs(2, 3, 2, 0.1, 4);
    ds2.features(0, 0) = 1.5;
    EXPECT_THROW(ds2.validate(), Error);
}

TEST(Dataset, Accuracy) {
    LabeledDataset ds = make_blobs(2, 2, 2, 0.1, 4);
    Mat out = ds.targets.transpose();
    EXPECT_DOUBLE_EQ(accuracy(out, ds), 1.0);
    out = -out;
    EXPECT_DOUBLE_EQ(accuracy(out, ds), 0.0);
}

TEST(Dataset, DataDirHonoursEnvironment) {
    ::setenv("KINF_DATA_DIR", "/tmp/somewhere", 1);
    EXPECT_EQ(data_dir(), fs::path("/tmp/somewhere"));
    ::unsetenv("KINF_DATA_DIR");
    EXPECT_EQ(data_dir(), fs::path("data"));
}
