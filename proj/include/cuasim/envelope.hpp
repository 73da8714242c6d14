#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "cuasim/domain.hpp"

// The typed wire message exchanged between agents, plus agent addressing.
// On the socket transport an Envelope is one newline-delimited JSON object
// with exactly these fields; transcript files additionally record the
// delivery timestamp so a session can be replayed.

namespace cuasim::netsim {

enum class Role { Authority, Cuas, Operator, Court };

const char* to_string(Role role);
std::optional<Role> role_from_string(const std::string& name);

struct AgentId {
    Role role = Role::Authority;
    int index = 0;

    std::string to_string() const;
    static AgentId parse(const std::string& text);

    static AgentId authority() { return {Role::Authority, 0}; }
    static AgentId court() { return {Role::Court, 0}; }
    static AgentId cuas(int index = 0) { return {Role::Cuas, index}; }
    static AgentId oper(int index) { return {Role::Operator, index}; }

    auto operator<=>(const AgentId&) const = default;
};

struct Envelope {
    std::uint64_t msg_id = 0;
    std::string correlation_id; // session id; empty outside any session
    AgentId sender;
    AgentId recipient;
    std::string msg_type;
    domain::TimestampMs sent_at = 0;
    nlohmann::json payload = nlohmann::json::object();

    nlohmann::ordered_json to_json() const;
    static Envelope from_json(const nlohmann::json& j);

    /// One transcript line: the envelope plus its delivery timestamp.
    std::string to_transcript_line(domain::TimestampMs delivered_at) const;
    static std::pair<Envelope, domain::TimestampMs> from_transcript_line(const std::string& line);
};

} // namespace cuasim::netsim
