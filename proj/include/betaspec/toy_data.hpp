#pragma once

// Procedural sprite dataset with exact generative factors: a shape rendered
// at a given scale, orientation, and grid position on a 32x32 canvas. The
// dataset is the full Cartesian product of factor values, so factors are
// independent by construction. Derived binary attributes threshold single
// factors.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "betaspec/parallel.hpp"
#include "betaspec/rng.hpp"

namespace betaspec {

struct Factor {
    std::string name;
    int cardinality = 0;
};

struct FactorSpec {
    std::vector<Factor> factors{{"shape", 3}, {"scale", 4}, {"orientation", 6},
                                {"pos_x", 8},  {"pos_y", 8}};
    int image_side = 32;
    int channels = 1;

    void validate() const {
        if (factors.empty()) throw std::invalid_argument("factor spec: no factors");
        for (const auto& f : factors)
            if (f.cardinality < 2)
                throw std::invalid_argument("factor spec: cardinality must be >= 2");
        if (image_side < 8) throw std::invalid_argument("factor spec: image side too small");
        if (channels != 1) throw std::invalid_argument("factor spec: only grayscale supported");
    }

    std::size_t dataset_size() const {
        std::size_t n = 1;
        for (const auto& f : factors) n *= static_cast<std::size_t>(f.cardinality);
        return n;
    }

    std::size_t pixels() const {
        return static_cast<std::size_t>(image_side) * static_cast<std::size_t>(image_side);
    }

    int factor_index(const std::string& name) const {
        for (std::size_t k = 0; k < factors.size(); ++k)
            if (factors[k].name == name) return static_cast<int>(k);
        throw std::out_of_range("factor spec: no factor named " + name);
    }
};

using FactorTuple = std::vector<int>;

inline void check_tuple(const FactorSpec& spec, const FactorTuple& tuple) {
    if (tuple.size() != spec.factors.size())
        throw std::invalid_argument("factor tuple: wrong arity");
    for (std::size_t k = 0; k < tuple.size(); ++k)
        if (tuple[k] < 0 || tuple[k] >= spec.factors[k].cardinality)
            throw std::out_of_range("factor tuple: index out of range for " +
                                    spec.factors[k].name);
}

// lexicographic order, last factor fastest
inline std::size_t tuple_to_index(const FactorSpec& spec, const FactorTuple& tuple) {
    check_tuple(spec, tuple);
    std::size_t idx = 0;
    for (std::size_t k = 0; k < tuple.size(); ++k)
        idx = idx * static_cast<std::size_t>(spec.factors[k].cardinality) +
              static_cast<std::size_t>(tuple[k]);
    return idx;
}

inline FactorTuple index_to_tuple(const FactorSpec& spec, std::size_t index) {
    FactorTuple tuple(spec.factors.size());
    for (std::size_t k = spec.factors.size(); k-- > 0;) {
        const auto card = static_cast<std::size_t>(spec.factors[k].cardinality);
        tuple[k] = static_cast<int>(index % card);
        index /= card;
    }
    return tuple;
}

namespace detail {

enum class ShapeKind { square = 0, ellipse = 1, triangle = 2 };

// Point-in-shape test in the shape's local (rotated, centered) frame.
// Half-extent r; the ellipse is squashed so orientation is identifiable.
inline bool inside_shape(ShapeKind kind, double u, double v, double r) {
    switch (kind) {
        case ShapeKind::square:
            return std::abs(u) <= r && std::abs(v) <= r;
        case ShapeKind::ellipse: {
            const double a = u / r, b = v / (0.55 * r);
            return a * a + b * b <= 1.0;
        }
        case ShapeKind::triangle: {
            // equilateral, circumradius 1.15 r, flat side down at angle 0
            const double cr = 1.15 * r;
            const double x0 = 0.0, y0 = -cr;                       // apex (up in image coords)
            const double x1 = cr * 0.8660254037844386, y1 = cr * 0.5;
            const double x2 = -cr * 0.8660254037844386, y2 = cr * 0.5;
            auto side = [](double ax, double ay, double bx, double by, double px, double py) {
                return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
            };
            const double d0 = side(x0, y0, x1, y1, u, v);
            const double d1 = side(x1, y1, x2, y2, u, v);
            const double d2 = side(x2, y2, x0, y0, u, v);
            const bool neg = (d0 < 0) || (d1 < 0) || (d2 < 0);
            const bool pos = (d0 > 0) || (d1 > 0) || (d2 > 0);
            return !(neg && pos);
        }
    }
    return false;
}

// Rotational symmetry period per shape, radians. Mapping the 6 orientation
// values inside one period keeps the factor identifiable.
inline double symmetry_period(ShapeKind kind) {
    switch (kind) {
        case ShapeKind::square: return 1.5707963267948966;    // pi/2
        case ShapeKind::ellipse: return 3.141592653589793;    // pi
        case ShapeKind::triangle: return 2.0943951023931953;  // 2 pi / 3
    }
    return 0.0;
}

}  // namespace detail

// Deterministic anti-aliased raster: 4x4 supersampling then box filter.
// Pixel values in [0, 1].
inline std::vector<double> render(const FactorSpec& spec, const FactorTuple& tuple) {
    check_tuple(spec, tuple);
    const int side = spec.image_side;
    const auto kind = static_cast<detail::ShapeKind>(tuple[spec.factor_index("shape")]);
    const int scale_idx = tuple[spec.factor_index("scale")];
    const int scale_card = spec.factors[spec.factor_index("scale")].cardinality;
    const int orient_idx = tuple[spec.factor_index("orientation")];
    const int orient_card = spec.factors[spec.factor_index("orientation")].cardinality;
    const int px_idx = tuple[spec.factor_index("pos_x")];
    const int px_card = spec.factors[spec.factor_index("pos_x")].cardinality;
    const int py_idx = tuple[spec.factor_index("pos_y")];
    const int py_card = spec.factors[spec.factor_index("pos_y")].cardinality;

    const double s = side / 32.0;  // geometry scales with resolution
    const double r_min = 3.5 * s, r_max = 8.0 * s;
    const double r = r_min + (r_max - r_min) * scale_idx / (scale_card - 1);
    const double margin = r_max * 1.2 + 1.0;
    const double cx = margin + (side - 2.0 * margin) * px_idx / (px_card - 1);
    const double cy = margin + (side - 2.0 * margin) * py_idx / (py_card - 1);
    const double angle = detail::symmetry_period(kind) * orient_idx / orient_card;
    const double ca = std::cos(angle), sa = std::sin(angle);

    std::vector<double> img(spec.pixels(), 0.0);
    constexpr int ss = 4;
    const double inv = 1.0 / (ss * ss);
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            int hits = 0;
            for (int sy = 0; sy < ss; ++sy) {
                for (int sx = 0; sx < ss; ++sx) {
                    const double px = x + (sx + 0.5) / ss - cx;
                    const double py = y + (sy + 0.5) / ss - cy;
                    const double u = ca * px + sa * py;
                    const double v = -sa * px + ca * py;
                    if (detail::inside_shape(kind, u, v, r)) ++hits;
                }
            }
            img[static_cast<std::size_t>(y) * side + x] = hits * inv;
        }
    }
    return img;
}

struct AttributeSet {
    std::vector<std::string> names;
    std::vector<bool> values;
};

// Each attribute thresholds exactly one factor:
//   is_square: shape == 0           is_large: scale >= card/2
//   is_upright: orientation < card/2
//   is_left: pos_x < card/2         is_top: pos_y < card/2
inline AttributeSet derive_attributes(const FactorSpec& spec, const FactorTuple& tuple) {
    check_tuple(spec, tuple);
    AttributeSet out;
    out.names = {"is_square", "is_large", "is_upright", "is_left", "is_top"};
    const auto at = [&](const char* name) { return tuple[spec.factor_index(name)]; };
    const auto card = [&](const char* name) {
        return spec.factors[spec.factor_index(name)].cardinality;
    };
    out.values = {at("shape") == 0,
                  at("scale") >= card("scale") / 2,
                  at("orientation") < card("orientation") / 2,
                  at("pos_x") < card("pos_x") / 2,
                  at("pos_y") < card("pos_y") / 2};
    return out;
}

// Seed-deterministic disjoint exhaustive split by Fisher-Yates permutation.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> dataset_split(
    const FactorSpec& spec, std::uint64_t seed, double train_fraction) {
    if (!(train_fraction > 0.0) || !(train_fraction < 1.0))
        throw std::invalid_argument("dataset_split: train_fraction must be in (0, 1)");
    const std::size_t n = spec.dataset_size();
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    RngStream rng(seed, 0x5eedu);
    for (std::size_t i = n - 1; i > 0; --i) {
        const std::size_t j = rng.next_below(i + 1);
        std::swap(perm[i], perm[j]);
    }
    auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
    n_train = std::max<std::size_t>(1, std::min(n - 1, n_train));
    return {std::vector<std::size_t>(perm.begin(), perm.begin() + static_cast<long>(n_train)),
            std::vector<std::size_t>(perm.begin() + static_cast<long>(n_train), perm.end())};
}

// Fully materialized dataset: images, factor tuples, attributes.
class FactorDataset {
public:
    explicit FactorDataset(FactorSpec spec) : spec_(std::move(spec)) {
        spec_.validate();
        const std::size_t n = spec_.dataset_size();
        images_.resize(n);
        parallel_for(n, [&](std::size_t i) { images_[i] = render(spec_, index_to_tuple(spec_, i)); });
    }

    const FactorSpec& spec() const { return spec_; }
    std::size_t size() const { return images_.size(); }
    const std::vector<double>& image(std::size_t i) const { return images_.at(i); }
    FactorTuple tuple(std::size_t i) const { return index_to_tuple(spec_, i); }
    AttributeSet attributes(std::size_t i) const {
        return derive_attributes(spec_, index_to_tuple(spec_, i));
    }

    std::vector<double> mean_image() const {
        std::vector<double> m(spec_.pixels(), 0.0);
        for (const auto& img : images_)
            for (std::size_t p = 0; p < m.size(); ++p) m[p] += img[p];
        for (auto& v : m) v /= static_cast<double>(images_.size());
        return m;
    }

    // --- container: "fds v1" header + float32 payload, lexicographic order ---

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("dataset: cannot open " + path);
        out << header_line() << "\n";
        std::vector<float> row(spec_.pixels());
        for (const auto& img : images_) {
            for (std::size_t p = 0; p < img.size(); ++p) row[p] = static_cast<float>(img[p]);
            out.write(reinterpret_cast<const char*>(row.data()),
                      static_cast<std::streamsize>(row.size() * sizeof(float)));
        }
        if (!out) throw std::runtime_error("dataset: write failed");
    }

    static FactorDataset load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("dataset: cannot open " + path);
        std::string header;
        std::getline(in, header);
        FactorSpec spec = parse_header(header);
        FactorDataset ds(spec, from_file_tag{});
        const std::size_t n = spec.dataset_size();
        ds.images_.assign(n, std::vector<double>(spec.pixels()));
        std::vector<float> row(spec.pixels());
        for (std::size_t i = 0; i < n; ++i) {
            in.read(reinterpret_cast<char*>(row.data()),
                    static_cast<std::streamsize>(row.size() * sizeof(float)));
            if (!in) throw std::runtime_error("dataset: truncated payload");
            for (std::size_t p = 0; p < row.size(); ++p) ds.images_[i][p] = row[p];
        }
        return ds;
    }

    void save_attributes_csv(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("dataset: cannot open " + path);
        const auto names = derive_attributes(spec_, index_to_tuple(spec_, 0)).names;
        out << "index";
        for (const auto& f : spec_.factors) out << "," << f.name;
        for (const auto& a : names) out << "," << a;
        out << "\n";
        for (std::size_t i = 0; i < size(); ++i) {
            const auto t = tuple(i);
            const auto attrs = attributes(i);
            out << i;
            for (int v : t) out << "," << v;
            for (bool b : attrs.values) out << "," << (b ? 1 : 0);
            out << "\n";
        }
    }

    std::string header_line() const {
        std::ostringstream out;
        out << "fds v1 side=" << spec_.image_side << " channels=" << spec_.channels
            << " factors=";
        for (std::size_t k = 0; k < spec_.factors.size(); ++k) {
            if (k) out << ",";
            out << spec_.factors[k].name << ":" << spec_.factors[k].cardinality;
        }
        return out.str();
    }

private:
    struct from_file_tag {};
    FactorDataset(FactorSpec spec, from_file_tag) : spec_(std::move(spec)) {}

    static FactorSpec parse_header(const std::string& line) {
        std::istringstream in(line);
        std::string word, version, sidef, chanf, factf;
        in >> word >> version >> sidef >> chanf >> factf;
        if (word != "fds" || version != "v1" || sidef.rfind("side=", 0) != 0 ||
            chanf.rfind("channels=", 0) != 0 || factf.rfind("factors=", 0) != 0)
            throw std::runtime_error("dataset: bad header: " + line);
        FactorSpec spec;
        spec.image_side = std::stoi(sidef.substr(5));
        spec.channels = std::stoi(chanf.substr(9));
        spec.factors.clear();
        std::istringstream flist(factf.substr(8));
        std::string item;
        while (std::getline(flist, item, ',')) {
            const auto colon = item.find(':');
            if (colon == std::string::npos) throw std::runtime_error("dataset: bad factor item");
            spec.factors.push_back({item.substr(0, colon), std::stoi(item.substr(colon + 1))});
        }
        spec.validate();
        return spec;
    }

    FactorSpec spec_;
    std::vector<std::vector<double>> images_;
};

}  // namespace betaspec
