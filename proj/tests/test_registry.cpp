#include <doctest.h>

#include <cstdio>
#include <random>

#include "cuasim/registry.hpp"

using namespace cuasim;
using namespace cuasim::registry;

namespace {

Zone square(double lat0, double lon0, double side) {
    return Zone({domain::GeoPoint(lat0, lon0), domain::GeoPoint(lat0, lon0 + side),
                 domain::GeoPoint(lat0 + side, lon0 + side), domain::GeoPoint(lat0 + side, lon0)});
}

IdRecord make_record(const std::string& id, domain::TimestampMs expiry = 1'000'000) {
    return IdRecord{DroneId(id), OperatorId::from_hex("0102030405060708"), expiry, "k1", "op data", {}};
}

MissionAuthorization make_auth(const std::string& id, domain::TimestampMs start,
                               domain::TimestampMs end, Zone area = square(0, 0, 1)) {
    static int seq = 0;
    return MissionAuthorization{"A" + std::to_string(++seq), DroneId(id),
                                OperatorId::from_hex("0102030405060708"),
                                domain::TimeWindow(start, end), area};
}

} // namespace

TEST_CASE("register then lookup round trip; duplicates rejected") {
    Registry reg;
    reg.register_drone(make_record("d1"));
    auto view = reg.lookup_id(DroneId("d1"), AccessLevel::Authority);
    REQUIRE(view.has_value());
    CHECK_EQ(view->drone_id.value(), "d1");
    CHECK_THROWS_AS(reg.register_drone(make_record("d1")), DuplicateIdError);
}

TEST_CASE("access levels truncate the view monotonically") {
    Registry reg;
    IdRecord rec = make_record("d1");
    rec.tracking.push_back({42, domain::GeoPoint(1, 1)});
    reg.register_drone(rec);

    auto pub = reg.lookup_id(DroneId("d1"), AccessLevel::Public);
    REQUIRE(pub);
    CHECK_EQ(pub->drone_id.value(), "d1");
    CHECK_FALSE(pub->operator_id);
    CHECK_FALSE(pub->expiry);
    CHECK_FALSE(pub->tracking);

    auto off = reg.lookup_id(DroneId("d1"), AccessLevel::Officials);
    REQUIRE(off);
    CHECK(off->operator_id);
    CHECK(off->personally_identifiable);
    CHECK(off->expiry);
    CHECK_FALSE(off->tracking);

    auto auth = reg.lookup_id(DroneId("d1"), AccessLevel::Authority);
    REQUIRE(auth);
    // Every field visible at a lower level stays visible.
    CHECK(auth->operator_id);
    CHECK(auth->personally_identifiable);
    CHECK(auth->expiry);
    REQUIRE(auth->tracking);
    CHECK_EQ(auth->tracking->size(), 1);
}

TEST_CASE("unknown id lookup is absence, not an error") {
    Registry reg;
    CHECK_FALSE(reg.lookup_id(DroneId("ghost"), AccessLevel::Authority));
}

TEST_CASE("token authenticity round trip and tamper detection") {
    Registry reg;
    reg.add_issuer_secret("k1", "authority-secret");
    const DroneId id("d1");
    auto token = reg.issue_token(id, "k1");

    auto msg = domain::RemoteIdMessage::make(id, domain::GeoPoint(0.5, 0.5), 3.0,
                                             domain::GeoPoint(0, 0), 100, false, token, 100);
    CHECK(reg.verify_authenticity(msg));

    auto tampered = token;
    tampered[3] ^= 0x40;
    msg.auth_token = tampered;
    CHECK_FALSE(reg.verify_authenticity(msg));
}

TEST_CASE("authentic token with id_db_miss fault: authenticity holds, lookup misses") {
    Registry reg;
    reg.add_issuer_secret("k1", "s");
    reg.register_drone(make_record("d1"));
    FaultInjection f;
    f.id_db_miss.insert("d1");
    reg.set_faults(f);

    auto msg = domain::RemoteIdMessage::make(DroneId("d1"), domain::GeoPoint(0.5, 0.5), 3.0,
                                             domain::GeoPoint(0, 0), 0, false,
                                             reg.issue_token(DroneId("d1"), "k1"), 0);
    CHECK(reg.verify_authenticity(msg));
    CHECK_FALSE(reg.lookup_id(DroneId("d1"), AccessLevel::Authority));

    // Removing the fault restores the record.
    reg.clear_fault("id_db_miss", DroneId("d1"));
    CHECK(reg.lookup_id(DroneId("d1"), AccessLevel::Authority));
}

TEST_CASE("expired registration detected by direct timestamp comparison") {
    Registry reg;
    reg.register_drone(make_record("old", /*expiry=*/50));
    auto view = reg.lookup_id(DroneId("old"), AccessLevel::Officials);
    REQUIRE(view);
    REQUIRE(view->expiry);
    const domain::TimestampMs now = 100;
    CHECK(*view->expiry <= now); // expired
}

TEST_CASE("stale_expiry fault reports a past expiry without touching the row") {
    Registry reg;
    reg.register_drone(make_record("d1", /*expiry=*/1'000'000));
    FaultInjection f;
    f.stale_expiry.insert("d1");
    reg.set_faults(f);
    auto view = reg.lookup_id(DroneId("d1"), AccessLevel::Officials);
    REQUIRE(view);
    CHECK(*view->expiry < 0);
    CHECK_EQ(reg.raw_id_record(DroneId("d1"))->expiry, 1'000'000);
    reg.clear_fault("stale_expiry", DroneId("d1"));
    CHECK_EQ(*reg.lookup_id(DroneId("d1"), AccessLevel::Officials)->expiry, 1'000'000);
}

TEST_CASE("find_authorization honors half-open windows and area containment") {
    Registry reg;
    reg.insert_authorization(make_auth("d1", 100, 200));
    const domain::GeoPoint inside(0.5, 0.5);
    const domain::GeoPoint outside(3.0, 3.0);

    CHECK(reg.find_authorization(DroneId("d1"), 100, inside)); // window start inclusive
    CHECK_FALSE(reg.find_authorization(DroneId("d1"), 200, inside)); // window end exclusive
    CHECK_FALSE(reg.find_authorization(DroneId("d1"), 150, outside));
    CHECK(reg.find_authorization_any(DroneId("d1"), 150)); // area-violation probe
}

TEST_CASE("overlapping authorizations for one drone are rejected") {
    Registry reg;
    reg.insert_authorization(make_auth("d1", 100, 200));
    CHECK_THROWS_AS(reg.insert_authorization(make_auth("d1", 150, 250)),
                    OverlappingAuthorizationError);
    // Back-to-back windows are legal (half-open).
    CHECK_NOTHROW(reg.insert_authorization(make_auth("d1", 200, 300)));
    // Other drones are unconstrained.
    CHECK_NOTHROW(reg.insert_authorization(make_auth("d2", 150, 250)));
}

TEST_CASE("authorization non-overlap property cross-checked with windows_overlap") {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<int> t(0, 50);
    for (int trial = 0; trial < 300; ++trial) {
        int a1 = t(rng), a2 = t(rng), b1 = t(rng), b2 = t(rng);
        if (a1 >= a2 || b1 >= b2) continue;
        Registry reg;
        reg.insert_authorization(make_auth("d", a1, a2));
        const bool overlaps =
            domain::windows_overlap(domain::TimeWindow(a1, a2), domain::TimeWindow(b1, b2));
        if (overlaps) {
            CHECK_THROWS_AS(reg.insert_authorization(make_auth("d", b1, b2)),
                            OverlappingAuthorizationError);
        } else {
            CHECK_NOTHROW(reg.insert_authorization(make_auth("d", b1, b2)));
        }
    }
}

TEST_CASE("find_potential_operators: deterministic (start, id) order") {
    Registry reg;
    CHECK(reg.find_potential_operators(square(0, 0, 1), 50).empty());

    reg.insert_authorization(make_auth("bravo", 0, 100));
    reg.insert_authorization(make_auth("alpha", 0, 100));
    reg.insert_authorization(make_auth("zulu", 10, 100)); // later start
    reg.insert_authorization(make_auth("omit", 60, 100)); // window not active at t=50... active
    reg.insert_authorization(make_auth("far", 0, 100, square(10, 10, 1))); // area disjoint

    auto result = reg.find_potential_operators(square(0, 0, 1), 50);
    REQUIRE_EQ(result.size(), 3);
    CHECK_EQ(result[0].drone_id.value(), "alpha");
    CHECK_EQ(result[1].drone_id.value(), "bravo");
    CHECK_EQ(result[2].drone_id.value(), "zulu");

    // Brute-force oracle: linear scan of the same rows with the predicate,
    // then sort by (start, id).
    std::vector<std::tuple<domain::TimestampMs, domain::TimestampMs, std::string, bool>> rows = {
        {0, 100, "bravo", true},  {0, 100, "alpha", true}, {10, 100, "zulu", true},
        {60, 100, "omit", true},  {0, 100, "far", false},
    };
    std::vector<std::pair<domain::TimestampMs, std::string>> expect;
    for (auto& [start, end, id, intersects] : rows) {
        if (start <= 50 && 50 < end && intersects) expect.push_back({start, id});
    }
    std::sort(expect.begin(), expect.end());
    REQUIRE_EQ(expect.size(), result.size());
    for (std::size_t i = 0; i < expect.size(); ++i)
        CHECK_EQ(expect[i].second, result[i].drone_id.value());
}

TEST_CASE("fault-injection transparency: cleared faults agree with linear scan") {
    Registry reg;
    std::vector<IdRecord> rows;
    std::vector<MissionAuthorization> auths;
    for (int i = 0; i < 40; ++i) {
        IdRecord rec = make_record("d" + std::to_string(i), 1000 + i);
        rows.push_back(rec);
        reg.register_drone(rec);
        auto auth = make_auth("d" + std::to_string(i), 10 * i, 10 * i + 9);
        auths.push_back(auth);
        reg.insert_authorization(auth);
    }
    FaultInjection f;
    f.id_db_miss = {"d3", "d7"};
    f.auth_db_miss = {"d5"};
    reg.set_faults(f);
    CHECK_FALSE(reg.lookup_id(DroneId("d3"), AccessLevel::Authority));
    CHECK_FALSE(reg.find_authorization_any(DroneId("d5"), 54));

    reg.set_faults(FaultInjection{});
    for (const auto& rec : rows) {
        auto got = reg.lookup_id(rec.drone_id, AccessLevel::Authority);
        REQUIRE(got);
        CHECK_EQ(*got->expiry, rec.expiry);
    }
    // Brute-force scan oracle over the stored authorization rows.
    for (domain::TimestampMs t = 0; t < 400; t += 7) {
        for (const auto& auth : auths) {
            const bool expect = auth.window.contains(t);
            const auto got = reg.find_authorization_any(auth.drone_id, t);
            CHECK_EQ(got.has_value(), expect);
            if (got) CHECK_EQ(got->auth_id, auth.auth_id);
        }
    }
    // Monotone visibility: every id ever returned remains returned.
    CHECK_EQ(reg.id_count(), rows.size());
}

TEST_CASE("jsonl persistence round trip preserves queries") {
    Registry reg;
    IdRecord rec = make_record("d1", 777);
    rec.tracking.push_back({5, domain::GeoPoint(1.5, 2.5)});
    reg.register_drone(rec);
    reg.register_drone(make_record("d2"));
    reg.insert_authorization(make_auth("d1", 10, 20));
    reg.insert_authorization(make_auth("d2", 30, 40, square(2, 2, 2)));

    const std::string id_path = "test_id_db.jsonl";
    const std::string auth_path = "test_auth_db.jsonl";
    reg.dump_id_db(id_path);
    reg.dump_auth_db(auth_path);

    Registry loaded;
    loaded.load_id_db(id_path);
    loaded.load_auth_db(auth_path);

    auto v = loaded.lookup_id(DroneId("d1"), AccessLevel::Authority);
    REQUIRE(v);
    CHECK_EQ(*v->expiry, 777);
    REQUIRE(v->tracking);
    CHECK_EQ(v->tracking->at(0).at, 5);
    CHECK(loaded.find_authorization(DroneId("d2"), 35, domain::GeoPoint(3, 3)));
    CHECK_FALSE(loaded.find_authorization(DroneId("d2"), 35, domain::GeoPoint(0.5, 0.5)));

    std::remove(id_path.c_str());
    std::remove(auth_path.c_str());
}
