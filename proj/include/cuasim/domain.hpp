#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

// Core vocabulary shared by every other module. All types here are immutable
// value objects validated at construction; no I/O, no behavior beyond
// validation and 2-D geometry.

namespace cuasim::domain {

using TimestampMs = std::int64_t;

class ValidationError : public std::invalid_argument {
public:
    explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// 8-byte opaque operator identifier, rendered as 16 hex characters.
class OperatorId {
public:
    static constexpr std::size_t kBytes = 8;

    explicit OperatorId(std::array<std::uint8_t, kBytes> raw) : raw_(raw) {}

    /// Parses the 16-hex-char rendering. Throws ValidationError on bad input.
    static OperatorId from_hex(const std::string& hex);

    std::string to_hex() const;
    const std::array<std::uint8_t, kBytes>& bytes() const { return raw_; }

    auto operator<=>(const OperatorId&) const = default;

private:
    std::array<std::uint8_t, kBytes> raw_{};
};

/// UAS unique identifier: 1..20 printable characters, no control characters.
class DroneId {
public:
    explicit DroneId(std::string value);

    const std::string& value() const { return value_; }
    auto operator<=>(const DroneId&) const = default;

private:
    std::string value_;
};

/// Latitude/longitude in degrees, altitude meters above ground.
struct GeoPoint {
    double lat = 0.0;
    double lon = 0.0;
    double alt = 0.0;

    GeoPoint() = default;
    GeoPoint(double lat_deg, double lon_deg, double alt_m = 0.0);

    bool operator==(const GeoPoint&) const = default;
};

/// Simple (non-self-intersecting) polygon over lat/lon; altitude is ignored.
class Zone {
public:
    explicit Zone(std::vector<GeoPoint> vertices);

    const std::vector<GeoPoint>& vertices() const { return vertices_; }

    bool operator==(const Zone&) const = default;

private:
    std::vector<GeoPoint> vertices_;
};

/// Half-open interval [start, end) in milliseconds since epoch.
struct TimeWindow {
    TimestampMs start = 0;
    TimestampMs end = 0;

    TimeWindow() = default;
    TimeWindow(TimestampMs start_ms, TimestampMs end_ms);

    bool contains(TimestampMs t) const { return start <= t && t < end; }
    bool operator==(const TimeWindow&) const = default;
};

/// The broadcast identity packet a drone emits.
struct RemoteIdMessage {
    DroneId drone_id;
    GeoPoint position;
    double velocity_mps = 0.0;
    GeoPoint station;
    TimestampMs time_mark = 0;
    bool emergency = false;
    std::vector<std::uint8_t> auth_token;

    /// Validates field invariants plus time_mark freshness against the send
    /// time under the given clock-skew bound.
    static RemoteIdMessage make(DroneId drone_id, GeoPoint position, double velocity_mps,
                                GeoPoint station, TimestampMs time_mark, bool emergency,
                                std::vector<std::uint8_t> auth_token, TimestampMs send_time,
                                TimestampMs clock_skew_bound_ms = 5000);
};

enum class RiskLevel { Low, High };

const char* to_string(RiskLevel level);

enum class DecisionKind {
    ImmediateInterdiction,
    TimedInterdiction,
    TolerateIdFailure,
    TolerateAuthFailure,
    TolerateMission,
    RestorationConfirmed,
    IssueResolved,
};

const char* to_string(DecisionKind kind);
std::optional<DecisionKind> decision_kind_from_string(const std::string& name);

/// An authority verdict. TimedInterdiction carries a positive timeout;
/// ImmediateInterdiction may carry the keep-intact hint used when the drone
/// should stay recoverable for forensics.
struct Decision {
    DecisionKind kind = DecisionKind::RestorationConfirmed;
    double timeout_s = 0.0;
    bool nondestructive = false;

    static Decision immediate(bool nondestructive = false);
    static Decision timed(double timeout_s);
    static Decision of(DecisionKind kind);

    bool is_tolerance() const {
        return kind == DecisionKind::TolerateIdFailure || kind == DecisionKind::TolerateAuthFailure ||
               kind == DecisionKind::TolerateMission;
    }
    bool is_interdiction() const {
        return kind == DecisionKind::ImmediateInterdiction || kind == DecisionKind::TimedInterdiction;
    }

    bool operator==(const Decision&) const = default;
};

/// True iff the lat/lon projection of p lies inside or on the boundary of z.
/// Ray casting; on-boundary counts as inside.
bool point_in_zone(const GeoPoint& p, const Zone& z);

/// Half-open interval overlap: a.start < b.end && b.start < a.end.
bool windows_overlap(const TimeWindow& a, const TimeWindow& b);

/// True iff the two zones' lat/lon projections intersect (shared area,
/// touching edge, or containment).
bool zones_intersect(const Zone& a, const Zone& b);

} // namespace cuasim::domain
