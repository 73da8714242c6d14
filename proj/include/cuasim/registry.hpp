#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "cuasim/domain.hpp"

// The FIMS data layer: ID-DB and AUTH-DB with tiered access levels,
// authenticity verification, and the queries the post-detection FSM and the
// clarification protocols need. Read-mostly: unlimited concurrent readers,
// serialized writers.

namespace cuasim::registry {

using domain::DroneId;
using domain::GeoPoint;
using domain::OperatorId;
using domain::TimestampMs;
using domain::TimeWindow;
using domain::Zone;

enum class AccessLevel { Public = 1, Officials = 2, Authority = 3 };

const char* to_string(AccessLevel level);
std::optional<AccessLevel> access_level_from_string(const std::string& name);

struct TrackPoint {
    TimestampMs at = 0;
    GeoPoint where;
};

/// One ID-DB row. Rows are never deleted; expiry marks invalidity.
struct IdRecord {
    DroneId drone_id;
    OperatorId operator_id;
    TimestampMs expiry = 0;
    std::string issuer_secret_ref;      // key identifier at the authority
    std::string personally_identifiable; // level-2 data, opaque here
    std::vector<TrackPoint> tracking;    // level-3 data
};

/// What a caller at a given access level gets to see of an IdRecord.
/// Fields absent below the required level. Public: drone_id only.
/// Officials adds operator_id, personally_identifiable, expiry.
/// Authority adds tracking.
struct IdRecordView {
    DroneId drone_id;
    std::optional<OperatorId> operator_id;
    std::optional<std::string> personally_identifiable;
    std::optional<TimestampMs> expiry;
    std::optional<std::vector<TrackPoint>> tracking;
};

/// One AUTH-DB row: permission for a drone to fly a mission in a time window
/// and area. For a fixed drone, windows never overlap.
struct MissionAuthorization {
    std::string auth_id;
    DroneId drone_id;
    OperatorId operator_id;
    TimeWindow window;
    Zone area;
};

/// Scenario switches reproducing the database failure modes: queries for
/// drones in the miss sets come back empty even though the row exists;
/// stale_expiry rows report an expiry artificially in the past.
struct FaultInjection {
    std::set<std::string> id_db_miss;
    std::set<std::string> auth_db_miss;
    std::set<std::string> stale_expiry;

    bool empty() const { return id_db_miss.empty() && auth_db_miss.empty() && stale_expiry.empty(); }
};

class DuplicateIdError : public std::runtime_error {
public:
    explicit DuplicateIdError(const std::string& id)
        : std::runtime_error("duplicate drone id: " + id) {}
};

class OverlappingAuthorizationError : public std::runtime_error {
public:
    explicit OverlappingAuthorizationError(const std::string& id)
        : std::runtime_error("overlapping authorization window for drone: " + id) {}
};

/// Computes and checks the deterministic token standing in for Remote ID
/// authenticity. Pluggable so a real MAC/signature can slot in later.
class TokenAuthenticator {
public:
    virtual ~TokenAuthenticator() = default;
    virtual std::vector<std::uint8_t> issue(const DroneId& id, const std::string& secret) const = 0;
    virtual bool verify(const DroneId& id, const std::vector<std::uint8_t>& token,
                        const std::string& secret) const = 0;
};

/// Default token function: a keyed 16-byte digest of (secret, drone id).
/// Deliberately not cryptographic; authenticity is modeled, not enforced.
class KeyedDigestAuthenticator final : public TokenAuthenticator {
public:
    std::vector<std::uint8_t> issue(const DroneId& id, const std::string& secret) const override;
    bool verify(const DroneId& id, const std::vector<std::uint8_t>& token,
                const std::string& secret) const override;
};

class Registry {
public:
    Registry();
    explicit Registry(std::shared_ptr<const TokenAuthenticator> authenticator);

    // -- writes (serialized) --

    void register_drone(const IdRecord& rec);
    void insert_authorization(const MissionAuthorization& auth);
    void add_issuer_secret(const std::string& key_ref, const std::string& secret);
    void set_faults(FaultInjection faults);
    void clear_fault(const std::string& which, const DroneId& id);

    // -- queries (concurrent) --

    std::optional<IdRecordView> lookup_id(const DroneId& id, AccessLevel level) const;
    bool verify_authenticity(const domain::RemoteIdMessage& msg) const;
    std::optional<MissionAuthorization> find_authorization(const DroneId& id, TimestampMs t,
                                                           const GeoPoint& p) const;
    std::optional<MissionAuthorization> find_authorization_any(const DroneId& id, TimestampMs t) const;

    /// All authorizations active at t whose area intersects the given zone,
    /// ordered by (window.start, drone_id) so runs are reproducible.
    std::vector<MissionAuthorization> find_potential_operators(const Zone& zone, TimestampMs t) const;

    /// Stored expiry for a drone as the databases would report it, i.e. with
    /// the stale_expiry fault applied. nullopt if the row is absent or missed.
    std::optional<TimestampMs> reported_expiry(const DroneId& id) const;

    FaultInjection faults() const;
    std::vector<std::uint8_t> issue_token(const DroneId& id, const std::string& key_ref) const;

    /// True iff the row physically exists, ignoring fault injection. This is
    /// the authority's ground-truth view used by protocol diagnosis.
    bool id_row_exists(const DroneId& id) const;
    bool auth_row_exists(const DroneId& id, TimestampMs t) const;
    std::optional<IdRecord> raw_id_record(const DroneId& id) const;

    std::size_t id_count() const;
    std::size_t auth_count() const;

    // -- persistence: one JSON object per line --

    void dump_id_db(const std::string& path) const;
    void dump_auth_db(const std::string& path) const;
    void load_id_db(const std::string& path);
    void load_auth_db(const std::string& path);

private:
    std::optional<MissionAuthorization> find_authorization_locked(const DroneId& id, TimestampMs t,
                                                                  const GeoPoint* p) const;

    mutable std::shared_mutex mutex_;
    std::map<std::string, IdRecord> id_db_;
    std::vector<MissionAuthorization> auth_db_;
    std::map<std::string, std::string> issuer_secrets_;
    FaultInjection faults_;
    std::shared_ptr<const TokenAuthenticator> authenticator_;
};

} // namespace cuasim::registry
