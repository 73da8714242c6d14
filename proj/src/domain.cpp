#include "cuasim/domain.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

namespace cuasim::domain {

namespace {

int hex_nibble(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

// Orientation of the ordered triple (a,b,c): >0 counter-clockwise, <0
// clockwise, 0 collinear. Works on the lat/lon projection.
double cross(const GeoPoint& a, const GeoPoint& b, const GeoPoint& c) {
    return (b.lon - a.lon) * (c.lat - a.lat) - (b.lat - a.lat) * (c.lon - a.lon);
}

bool on_segment(const GeoPoint& p, const GeoPoint& a, const GeoPoint& b) {
    if (std::abs(cross(a, b, p)) > 1e-12) return false;
    return std::min(a.lon, b.lon) - 1e-12 <= p.lon && p.lon <= std::max(a.lon, b.lon) + 1e-12 &&
           std::min(a.lat, b.lat) - 1e-12 <= p.lat && p.lat <= std::max(a.lat, b.lat) + 1e-12;
}

bool segments_properly_intersect(const GeoPoint& a, const GeoPoint& b, const GeoPoint& c,
                                 const GeoPoint& d) {
    const double d1 = cross(c, d, a);
    const double d2 = cross(c, d, b);
    const double d3 = cross(a, b, c);
    const double d4 = cross(a, b, d);
    return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}

bool segments_touch(const GeoPoint& a, const GeoPoint& b, const GeoPoint& c, const GeoPoint& d) {
    if (segments_properly_intersect(a, b, c, d)) return true;
    return on_segment(c, a, b) || on_segment(d, a, b) || on_segment(a, c, d) || on_segment(b, c, d);
}

} // namespace

OperatorId OperatorId::from_hex(const std::string& hex) {
    if (hex.size() != 2 * kBytes) throw ValidationError("OperatorId: expected 16 hex characters");
    std::array<std::uint8_t, kBytes> raw{};
    for (std::size_t i = 0; i < kBytes; ++i) {
        const int hi = hex_nibble(hex[2 * i]);
        const int lo = hex_nibble(hex[2 * i + 1]);
        if (hi < 0 || lo < 0) throw ValidationError("OperatorId: non-hex character");
        raw[i] = static_cast<std::uint8_t>(hi << 4 | lo);
    }
    return OperatorId(raw);
}

std::string OperatorId::to_hex() const {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(2 * kBytes);
    for (std::uint8_t b : raw_) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xf]);
    }
    return out;
}

DroneId::DroneId(std::string value) : value_(std::move(value)) {
    if (value_.empty() || value_.size() > 20)
        throw ValidationError("DroneId: length must be 1..20");
    for (unsigned char c : value_) {
        if (c < 0x20 || c == 0x7f) throw ValidationError("DroneId: control character");
    }
}

GeoPoint::GeoPoint(double lat_deg, double lon_deg, double alt_m) : lat(lat_deg), lon(lon_deg), alt(alt_m) {
    if (!(lat >= -90.0 && lat <= 90.0)) throw ValidationError("GeoPoint: latitude out of range");
    if (!(lon >= -180.0 && lon <= 180.0)) throw ValidationError("GeoPoint: longitude out of range");
    if (!(alt >= 0.0) || !std::isfinite(alt)) throw ValidationError("GeoPoint: altitude must be >= 0");
}

Zone::Zone(std::vector<GeoPoint> vertices) : vertices_(std::move(vertices)) {
    const std::size_t n = vertices_.size();
    if (n < 3) throw ValidationError("Zone: needs at least 3 vertices");
    for (std::size_t i = 0; i < n; ++i) {
        const GeoPoint& a = vertices_[i];
        const GeoPoint& b = vertices_[(i + 1) % n];
        if (a.lat == b.lat && a.lon == b.lon)
            throw ValidationError("Zone: consecutive duplicate vertex");
    }
    // Non-adjacent edges must not intersect.
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const bool adjacent = (j == i + 1) || (i == 0 && j == n - 1);
            if (adjacent) continue;
            if (segments_properly_intersect(vertices_[i], vertices_[(i + 1) % n], vertices_[j],
                                            vertices_[(j + 1) % n]))
                throw ValidationError("Zone: self-intersecting polygon");
        }
    }
}

TimeWindow::TimeWindow(TimestampMs start_ms, TimestampMs end_ms) : start(start_ms), end(end_ms) {
    if (!(start < end)) throw ValidationError("TimeWindow: start must precede end");
}

RemoteIdMessage RemoteIdMessage::make(DroneId drone_id, GeoPoint position, double velocity_mps,
                                      GeoPoint station, TimestampMs time_mark, bool emergency,
                                      std::vector<std::uint8_t> auth_token, TimestampMs send_time,
                                      TimestampMs clock_skew_bound_ms) {
    if (!std::isfinite(velocity_mps) || velocity_mps < 0.0)
        throw ValidationError("RemoteIdMessage: velocity must be finite and >= 0");
    if (std::llabs(time_mark - send_time) > clock_skew_bound_ms)
        throw ValidationError("RemoteIdMessage: time_mark outside clock-skew bound");
    RemoteIdMessage msg{std::move(drone_id), position, velocity_mps, station,
                        time_mark,           emergency, std::move(auth_token)};
    return msg;
}

const char* to_string(RiskLevel level) { return level == RiskLevel::Low ? "Low" : "High"; }

const char* to_string(DecisionKind kind) {
    switch (kind) {
    case DecisionKind::ImmediateInterdiction: return "ImmediateInterdiction";
    case DecisionKind::TimedInterdiction: return "TimedInterdiction";
    case DecisionKind::TolerateIdFailure: return "TolerateIdFailure";
    case DecisionKind::TolerateAuthFailure: return "TolerateAuthFailure";
    case DecisionKind::TolerateMission: return "TolerateMission";
    case DecisionKind::RestorationConfirmed: return "RestorationConfirmed";
    case DecisionKind::IssueResolved: return "IssueResolved";
    }
    return "?";
}

std::optional<DecisionKind> decision_kind_from_string(const std::string& name) {
    for (DecisionKind k : {DecisionKind::ImmediateInterdiction, DecisionKind::TimedInterdiction,
                           DecisionKind::TolerateIdFailure, DecisionKind::TolerateAuthFailure,
                           DecisionKind::TolerateMission, DecisionKind::RestorationConfirmed,
                           DecisionKind::IssueResolved}) {
        if (name == to_string(k)) return k;
    }
    return std::nullopt;
}

Decision Decision::immediate(bool nondestructive) {
    Decision d;
    d.kind = DecisionKind::ImmediateInterdiction;
    d.nondestructive = nondestructive;
    return d;
}

Decision Decision::timed(double timeout_s) {
    if (!(timeout_s > 0.0)) throw ValidationError("Decision: timed interdiction timeout must be > 0");
    Decision d;
    d.kind = DecisionKind::TimedInterdiction;
    d.timeout_s = timeout_s;
    return d;
}

Decision Decision::of(DecisionKind kind) {
    if (kind == DecisionKind::TimedInterdiction)
        throw ValidationError("Decision: use Decision::timed for timed interdiction");
    Decision d;
    d.kind = kind;
    return d;
}

bool point_in_zone(const GeoPoint& p, const Zone& z) {
    const auto& v = z.vertices();
    const std::size_t n = v.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (on_segment(p, v[i], v[(i + 1) % n])) return true;
    }
    // Crossing-number parity with the half-open vertex rule: each edge counts
    // when exactly one endpoint is strictly above the ray origin's latitude.
    bool inside = false;
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const GeoPoint& a = v[i];
        const GeoPoint& b = v[j];
        if ((a.lat > p.lat) != (b.lat > p.lat)) {
            const double x = (b.lon - a.lon) * (p.lat - a.lat) / (b.lat - a.lat) + a.lon;
            if (p.lon < x) inside = !inside;
        }
    }
    return inside;
}

bool windows_overlap(const TimeWindow& a, const TimeWindow& b) {
    return a.start < b.end && b.start < a.end;
}

bool zones_intersect(const Zone& a, const Zone& b) {
    for (const GeoPoint& p : a.vertices())
        if (point_in_zone(p, b)) return true;
    for (const GeoPoint& p : b.vertices())
        if (point_in_zone(p, a)) return true;
    const auto& va = a.vertices();
    const auto& vb = b.vertices();
    for (std::size_t i = 0; i < va.size(); ++i)
        for (std::size_t j = 0; j < vb.size(); ++j)
            if (segments_touch(va[i], va[(i + 1) % va.size()], vb[j], vb[(j + 1) % vb.size()]))
                return true;
    return false;
}

} // namespace cuasim::domain
