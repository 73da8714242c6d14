#include <doctest.h>

#include <cmath>
#include <random>

#include "cuasim/domain.hpp"

using namespace cuasim::domain;

namespace {

// Independent point-in-polygon oracle: winding number via signed angles.
// Counts boundary points as inside through an explicit on-segment check, like
// the implementation contract requires.
bool winding_number_oracle(const GeoPoint& p, const Zone& z) {
    const auto& v = z.vertices();
    const std::size_t n = v.size();
    for (std::size_t i = 0; i < n; ++i) {
        const GeoPoint& a = v[i];
        const GeoPoint& b = v[(i + 1) % n];
        const double cross = (b.lon - a.lon) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lon - a.lon);
        if (std::abs(cross) < 1e-12 && std::min(a.lon, b.lon) - 1e-12 <= p.lon &&
            p.lon <= std::max(a.lon, b.lon) + 1e-12 && std::min(a.lat, b.lat) - 1e-12 <= p.lat &&
            p.lat <= std::max(a.lat, b.lat) + 1e-12)
            return true;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const GeoPoint& a = v[i];
        const GeoPoint& b = v[(i + 1) % n];
        const double x1 = a.lon - p.lon, y1 = a.lat - p.lat;
        const double x2 = b.lon - p.lon, y2 = b.lat - p.lat;
        total += std::atan2(x1 * y2 - y1 * x2, x1 * x2 + y1 * y2);
    }
    return std::abs(total) > 1.0; // ~2*pi inside, ~0 outside
}

// Random simple polygon: random radii around a center, vertices sorted by
// angle (star-shaped, hence simple).
Zone random_simple_polygon(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> nverts(3, 10);
    std::uniform_real_distribution<double> angle_jitter(0.02, 0.9);
    std::uniform_real_distribution<double> radius(0.2, 2.0);
    const int n = nverts(rng);
    std::vector<double> angles;
    double a = 0.0;
    for (int i = 0; i < n; ++i) {
        a += angle_jitter(rng);
        angles.push_back(a);
    }
    const double span = angles.back() + angle_jitter(rng);
    std::vector<GeoPoint> vs;
    for (int i = 0; i < n; ++i) {
        const double theta = angles[i] / span * 2.0 * M_PI;
        const double r = radius(rng);
        vs.emplace_back(10.0 + r * std::sin(theta), 20.0 + r * std::cos(theta));
    }
    return Zone(std::move(vs));
}

Zone unit_square() {
    return Zone({GeoPoint(0, 0), GeoPoint(0, 1), GeoPoint(1, 1), GeoPoint(1, 0)});
}

} // namespace

TEST_CASE("point_in_zone basics") {
    const Zone z = unit_square();
    CHECK(point_in_zone(GeoPoint(0.5, 0.5), z));      // interior
    CHECK(point_in_zone(GeoPoint(0, 0), z));          // vertex counts as inside
    CHECK(point_in_zone(GeoPoint(0, 0.5), z));        // edge counts as inside
    // 2x the bounding-box diagonal away.
    CHECK_FALSE(point_in_zone(GeoPoint(1 + 2 * std::sqrt(2.0), 1 + 2 * std::sqrt(2.0)), z));
    CHECK_FALSE(point_in_zone(GeoPoint(-0.0001, 0.5), z));
}

TEST_CASE("point_in_zone agrees with winding-number oracle on random polygons") {
    std::mt19937_64 rng(20260808);
    std::uniform_real_distribution<double> coord(-2.5, 2.5);
    int checked = 0;
    for (int pi = 0; pi < 100; ++pi) {
        const Zone z = random_simple_polygon(rng);
        for (int qi = 0; qi < 100; ++qi) {
            const GeoPoint p(10.0 + coord(rng), 20.0 + coord(rng));
            INFO("polygon ", pi, " point ", qi, " (", p.lat, ",", p.lon, ")");
            CHECK_EQ(point_in_zone(p, z), winding_number_oracle(p, z));
            ++checked;
        }
        // Vertices and edge midpoints are boundary, hence inside.
        const auto& vs = z.vertices();
        for (std::size_t i = 0; i < vs.size(); ++i) {
            CHECK(point_in_zone(vs[i], z));
            const auto& b = vs[(i + 1) % vs.size()];
            CHECK(point_in_zone(GeoPoint((vs[i].lat + b.lat) / 2, (vs[i].lon + b.lon) / 2), z));
        }
    }
    CHECK_GE(checked, 10000);
}

TEST_CASE("windows_overlap half-open semantics") {
    CHECK_FALSE(windows_overlap(TimeWindow(0, 10), TimeWindow(10, 20))); // touching endpoints
    CHECK(windows_overlap(TimeWindow(0, 10), TimeWindow(5, 6)));        // containment
    CHECK(windows_overlap(TimeWindow(3, 7), TimeWindow(6, 9)));
}

TEST_CASE("windows_overlap matches interval-intersection oracle on all small integer pairs") {
    for (int a1 = 0; a1 <= 5; ++a1)
        for (int a2 = a1 + 1; a2 <= 5; ++a2)
            for (int b1 = 0; b1 <= 5; ++b1)
                for (int b2 = b1 + 1; b2 <= 5; ++b2) {
                    const TimeWindow a(a1, a2), b(b1, b2);
                    // Oracle: some integer half-open cell [t, t+1) in both.
                    bool any = false;
                    for (int t = 0; t < 5; ++t)
                        if (a1 <= t && t < a2 && b1 <= t && t < b2) any = true;
                    CHECK_EQ(windows_overlap(a, b), any);
                    CHECK_EQ(windows_overlap(a, b), windows_overlap(b, a)); // symmetry
                }
}

TEST_CASE("construction rejects invalid values") {
    CHECK_THROWS_AS(DroneId(""), ValidationError);
    CHECK_THROWS_AS(DroneId(std::string(21, 'x')), ValidationError);
    CHECK_THROWS_AS(DroneId("bad\x01id"), ValidationError);
    CHECK_NOTHROW(DroneId("uas-042"));

    CHECK_THROWS_AS(OperatorId::from_hex("123"), ValidationError);
    CHECK_THROWS_AS(OperatorId::from_hex("zz00000000000000"), ValidationError);
    CHECK_EQ(OperatorId::from_hex("00ff00ff00ff00ff").to_hex(), "00ff00ff00ff00ff");

    CHECK_THROWS_AS(GeoPoint(91, 0), ValidationError);
    CHECK_THROWS_AS(GeoPoint(0, 181), ValidationError);
    CHECK_THROWS_AS(GeoPoint(0, 0, -1), ValidationError);

    CHECK_THROWS_AS(Zone({GeoPoint(0, 0), GeoPoint(1, 1)}), ValidationError);
    CHECK_THROWS_AS(Zone({GeoPoint(0, 0), GeoPoint(0, 0), GeoPoint(1, 1)}), ValidationError);
    // Bowtie self-intersection.
    CHECK_THROWS_AS(Zone({GeoPoint(0, 0), GeoPoint(1, 1), GeoPoint(1, 0), GeoPoint(0, 1)}),
                    ValidationError);

    CHECK_THROWS_AS(TimeWindow(5, 5), ValidationError);
    CHECK_THROWS_AS(TimeWindow(6, 5), ValidationError);

    CHECK_THROWS_AS(Decision::timed(0.0), ValidationError);
    CHECK_THROWS_AS(RemoteIdMessage::make(DroneId("d"), GeoPoint(0, 0), -1.0, GeoPoint(0, 0), 0,
                                          false, {}, 0),
                    ValidationError);
    // time_mark outside the skew bound of the send time.
    CHECK_THROWS_AS(RemoteIdMessage::make(DroneId("d"), GeoPoint(0, 0), 1.0, GeoPoint(0, 0), 0,
                                          false, {}, 10000, 5000),
                    ValidationError);
    CHECK_NOTHROW(RemoteIdMessage::make(DroneId("d"), GeoPoint(0, 0), 1.0, GeoPoint(0, 0), 9000,
                                        false, {}, 10000, 5000));
}

TEST_CASE("zones_intersect covers containment and edge touching") {
    const Zone a = unit_square();
    const Zone inner({GeoPoint(0.25, 0.25), GeoPoint(0.25, 0.75), GeoPoint(0.75, 0.75),
                      GeoPoint(0.75, 0.25)});
    const Zone far({GeoPoint(5, 5), GeoPoint(5, 6), GeoPoint(6, 6)});
    const Zone touching({GeoPoint(0, 1), GeoPoint(0, 2), GeoPoint(1, 2), GeoPoint(1, 1)});
    CHECK(zones_intersect(a, inner));
    CHECK(zones_intersect(inner, a));
    CHECK_FALSE(zones_intersect(a, far));
    CHECK(zones_intersect(a, touching));
}
