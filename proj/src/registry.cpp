#include "cuasim/registry.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>

#include <json.hpp>

namespace cuasim::registry {

using nlohmann::json;

const char* to_string(AccessLevel level) {
    switch (level) {
    case AccessLevel::Public: return "Public";
    case AccessLevel::Officials: return "Officials";
    case AccessLevel::Authority: return "Authority";
    }
    return "?";
}

std::optional<AccessLevel> access_level_from_string(const std::string& name) {
    if (name == "Public") return AccessLevel::Public;
    if (name == "Officials") return AccessLevel::Officials;
    if (name == "Authority") return AccessLevel::Authority;
    return std::nullopt;
}

namespace {

// FNV-1a over (tag, secret, 0x00, id), widened to 16 bytes with two tags.
std::uint64_t fnv1a(std::uint64_t seed, const std::string& data) {
    std::uint64_t h = seed ^ 14695981039346656037ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 7; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

json zone_to_json(const Zone& z) {
    json arr = json::array();
    for (const auto& v : z.vertices()) arr.push_back(json::array({v.lat, v.lon}));
    return arr;
}

Zone zone_from_json(const json& arr) {
    std::vector<GeoPoint> vs;
    for (const auto& p : arr) vs.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    return Zone(std::move(vs));
}

} // namespace

std::vector<std::uint8_t> KeyedDigestAuthenticator::issue(const DroneId& id,
                                                          const std::string& secret) const {
    const std::string material = secret + '\x00' + id.value();
    std::vector<std::uint8_t> token;
    token.reserve(16);
    append_u64(token, fnv1a(0x746f6b656e2d3161ull, material));
    append_u64(token, fnv1a(0x746f6b656e2d3162ull, material));
    return token;
}

bool KeyedDigestAuthenticator::verify(const DroneId& id, const std::vector<std::uint8_t>& token,
                                      const std::string& secret) const {
    return token == issue(id, secret);
}

Registry::Registry() : Registry(std::make_shared<KeyedDigestAuthenticator>()) {}

Registry::Registry(std::shared_ptr<const TokenAuthenticator> authenticator)
    : authenticator_(std::move(authenticator)) {}

void Registry::register_drone(const IdRecord& rec) {
    std::unique_lock lock(mutex_);
    auto [it, inserted] = id_db_.emplace(rec.drone_id.value(), rec);
    if (!inserted) throw DuplicateIdError(rec.drone_id.value());
}

void Registry::insert_authorization(const MissionAuthorization& auth) {
    std::unique_lock lock(mutex_);
    for (const auto& existing : auth_db_) {
        if (existing.drone_id == auth.drone_id && domain::windows_overlap(existing.window, auth.window))
            throw OverlappingAuthorizationError(auth.drone_id.value());
    }
    auth_db_.push_back(auth);
}

void Registry::add_issuer_secret(const std::string& key_ref, const std::string& secret) {
    std::unique_lock lock(mutex_);
    issuer_secrets_[key_ref] = secret;
}

void Registry::set_faults(FaultInjection faults) {
    std::unique_lock lock(mutex_);
    faults_ = std::move(faults);
}

void Registry::clear_fault(const std::string& which, const DroneId& id) {
    std::unique_lock lock(mutex_);
    if (which == "id_db_miss") faults_.id_db_miss.erase(id.value());
    else if (which == "auth_db_miss") faults_.auth_db_miss.erase(id.value());
    else if (which == "stale_expiry") faults_.stale_expiry.erase(id.value());
    else throw std::runtime_error("unknown fault set: " + which);
}

std::optional<IdRecordView> Registry::lookup_id(const DroneId& id, AccessLevel level) const {
    std::shared_lock lock(mutex_);
    if (faults_.id_db_miss.count(id.value())) return std::nullopt;
    auto it = id_db_.find(id.value());
    if (it == id_db_.end()) return std::nullopt;
    const IdRecord& rec = it->second;

    IdRecordView view{rec.drone_id, {}, {}, {}, {}};
    if (level >= AccessLevel::Officials) {
        view.operator_id = rec.operator_id;
        view.personally_identifiable = rec.personally_identifiable;
        // A stale row reports an expiry unambiguously in the past for any
        // clock this simulator runs (virtual clocks start at 0).
        view.expiry = faults_.stale_expiry.count(id.value()) ? std::min(rec.expiry, TimestampMs{-1})
                                                             : rec.expiry;
    }
    if (level >= AccessLevel::Authority) view.tracking = rec.tracking;
    return view;
}

std::optional<TimestampMs> Registry::reported_expiry(const DroneId& id) const {
    auto view = lookup_id(id, AccessLevel::Officials);
    if (!view) return std::nullopt;
    return view->expiry;
}

bool Registry::verify_authenticity(const domain::RemoteIdMessage& msg) const {
    std::shared_lock lock(mutex_);
    // Deliberately independent of ID-DB presence: an authentic token whose
    // row cannot be found is exactly the unknown-ID clarification territory.
    for (const auto& [ref, secret] : issuer_secrets_) {
        if (authenticator_->verify(msg.drone_id, msg.auth_token, secret)) return true;
    }
    return false;
}

std::optional<MissionAuthorization> Registry::find_authorization_locked(const DroneId& id,
                                                                        TimestampMs t,
                                                                        const GeoPoint* p) const {
    if (faults_.auth_db_miss.count(id.value())) return std::nullopt;
    for (const auto& auth : auth_db_) {
        if (auth.drone_id != id) continue;
        if (!auth.window.contains(t)) continue;
        if (p != nullptr && !domain::point_in_zone(*p, auth.area)) continue;
        return auth;
    }
    return std::nullopt;
}

std::optional<MissionAuthorization> Registry::find_authorization(const DroneId& id, TimestampMs t,
                                                                 const GeoPoint& p) const {
    std::shared_lock lock(mutex_);
    return find_authorization_locked(id, t, &p);
}

std::optional<MissionAuthorization> Registry::find_authorization_any(const DroneId& id,
                                                                     TimestampMs t) const {
    std::shared_lock lock(mutex_);
    return find_authorization_locked(id, t, nullptr);
}

std::vector<MissionAuthorization> Registry::find_potential_operators(const Zone& zone,
                                                                     TimestampMs t) const {
    std::shared_lock lock(mutex_);
    std::vector<MissionAuthorization> out;
    for (const auto& auth : auth_db_) {
        if (faults_.auth_db_miss.count(auth.drone_id.value())) continue;
        if (!auth.window.contains(t)) continue;
        if (!domain::zones_intersect(auth.area, zone)) continue;
        out.push_back(auth);
    }
    std::sort(out.begin(), out.end(), [](const MissionAuthorization& a, const MissionAuthorization& b) {
        if (a.window.start != b.window.start) return a.window.start < b.window.start;
        return a.drone_id.value() < b.drone_id.value();
    });
    return out;
}

FaultInjection Registry::faults() const {
    std::shared_lock lock(mutex_);
    return faults_;
}

std::vector<std::uint8_t> Registry::issue_token(const DroneId& id, const std::string& key_ref) const {
    std::shared_lock lock(mutex_);
    auto it = issuer_secrets_.find(key_ref);
    if (it == issuer_secrets_.end()) throw std::runtime_error("unknown issuer secret: " + key_ref);
    return authenticator_->issue(id, it->second);
}

bool Registry::id_row_exists(const DroneId& id) const {
    std::shared_lock lock(mutex_);
    return id_db_.count(id.value()) > 0;
}

bool Registry::auth_row_exists(const DroneId& id, TimestampMs t) const {
    std::shared_lock lock(mutex_);
    for (const auto& auth : auth_db_) {
        if (auth.drone_id == id && auth.window.contains(t)) return true;
    }
    return false;
}

std::optional<IdRecord> Registry::raw_id_record(const DroneId& id) const {
    std::shared_lock lock(mutex_);
    auto it = id_db_.find(id.value());
    if (it == id_db_.end()) return std::nullopt;
    return it->second;
}

std::size_t Registry::id_count() const {
    std::shared_lock lock(mutex_);
    return id_db_.size();
}

std::size_t Registry::auth_count() const {
    std::shared_lock lock(mutex_);
    return auth_db_.size();
}

void Registry::dump_id_db(const std::string& path) const {
    std::shared_lock lock(mutex_);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const auto& [key, rec] : id_db_) {
        json track = json::array();
        for (const auto& tp : rec.tracking)
            track.push_back(json::array({tp.at, tp.where.lat, tp.where.lon}));
        json line = {{"drone_id", rec.drone_id.value()},
                     {"operator_id", rec.operator_id.to_hex()},
                     {"expiry", rec.expiry},
                     {"issuer_secret_ref", rec.issuer_secret_ref},
                     {"personally_identifiable", rec.personally_identifiable},
                     {"tracking", track}};
        out << line.dump() << '\n';
    }
}

void Registry::dump_auth_db(const std::string& path) const {
    std::shared_lock lock(mutex_);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const auto& auth : auth_db_) {
        json line = {{"auth_id", auth.auth_id},
                     {"drone_id", auth.drone_id.value()},
                     {"operator_id", auth.operator_id.to_hex()},
                     {"window", {{"start", auth.window.start}, {"end", auth.window.end}}},
                     {"area", zone_to_json(auth.area)}};
        out << line.dump() << '\n';
    }
}

void Registry::load_id_db(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        IdRecord rec{DroneId(j.at("drone_id").get<std::string>()),
                     OperatorId::from_hex(j.at("operator_id").get<std::string>()),
                     j.at("expiry").get<TimestampMs>(),
                     j.at("issuer_secret_ref").get<std::string>(),
                     j.value("personally_identifiable", std::string{}),
                     {}};
        if (j.contains("tracking")) {
            for (const auto& tp : j["tracking"]) {
                rec.tracking.push_back(
                    {tp.at(0).get<TimestampMs>(),
                     GeoPoint(tp.at(1).get<double>(), tp.at(2).get<double>())});
            }
        }
        register_drone(rec);
    }
}

void Registry::load_auth_db(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        MissionAuthorization auth{j.at("auth_id").get<std::string>(),
                                  DroneId(j.at("drone_id").get<std::string>()),
                                  OperatorId::from_hex(j.at("operator_id").get<std::string>()),
                                  TimeWindow(j.at("window").at("start").get<TimestampMs>(),
                                             j.at("window").at("end").get<TimestampMs>()),
                                  zone_from_json(j.at("area"))};
        insert_authorization(auth);
    }
}

} // namespace cuasim::registry
