#pragma once

#include "error.hpp"
#include "ids.hpp"
#include "net_model.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace gridos
{
    using Json = nlohmann::ordered_json;

    inline Json to_json(PeerId p) { return p.value; }

    inline Json to_json(const GridThreadId& id) { return Json::array({id.node.value, id.epoch, id.counter}); }

    inline GridThreadId thread_id_from_json(const Json& j)
    {
        return GridThreadId{PeerId{j.at(0).get<std::uint64_t>()}, j.at(1).get<double>(), j.at(2).get<std::uint64_t>()};
    }

    /// One line of the event trace.
    struct TraceRecord
    {
        std::uint64_t seq = 0;
        SimTime time = 0.0;
        std::string kind;
        Json data = Json::object();

        friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
    };

    /// Totally ordered record of a run. Times never decrease; seq is the
    /// record's position.
    class Trace
    {
    public:
        TraceRecord& append(SimTime time, std::string kind, Json data = Json::object())
        {
            if (!records_.empty() && time < records_.back().time)
            {
                throw Error(Errc::InvalidSpec, "trace time went backwards at " + kind);
            }
            if (data.contains("seq") || data.contains("t") || data.contains("kind"))
            {
                throw Error(Errc::InvalidSpec, kind + " uses a reserved trace field");
            }
            records_.push_back({records_.size(), time, std::move(kind), std::move(data)});
            return records_.back();
        }

        [[nodiscard]] const std::vector<TraceRecord>& records() const noexcept { return records_; }
        [[nodiscard]] std::size_t size() const noexcept { return records_.size(); }

        [[nodiscard]] std::size_t count(std::string_view kind) const
        {
            std::size_t n = 0;
            for (const auto& r : records_)
            {
                n += r.kind == kind ? 1 : 0;
            }
            return n;
        }

        /// Newline-delimited JSON, one record per line: seq, t, kind, then the
        /// record's own fields in insertion order.
        void write_ndjson(std::ostream& os) const
        {
            for (const auto& r : records_)
            {
                os << record_to_json(r).dump() << '\n';
            }
        }

        [[nodiscard]] std::string to_ndjson() const
        {
            std::ostringstream os;
            write_ndjson(os);
            return os.str();
        }

        static Json record_to_json(const TraceRecord& r)
        {
            Json j = Json::object();
            j["seq"] = r.seq;
            j["t"] = r.time;
            j["kind"] = r.kind;
            for (const auto& [k, v] : r.data.items())
            {
                j[k] = v;
            }
            return j;
        }

        static Trace read_ndjson(std::istream& is)
        {
            Trace t;
            std::string line;
            std::size_t lineno = 0;
            while (std::getline(is, line))
            {
                ++lineno;
                if (line.empty())
                {
                    continue;
                }
                Json j;
                try
                {
                    j = Json::parse(line);
                }
                catch (const nlohmann::json::exception& e)
                {
                    throw Error(Errc::ParseError, "trace line " + std::to_string(lineno) + ": " + e.what());
                }
                TraceRecord r;
                r.seq = j.at("seq").get<std::uint64_t>();
                r.time = j.at("t").get<double>();
                r.kind = j.at("kind").get<std::string>();
                for (const auto& [k, v] : j.items())
                {
                    if (k != "seq" && k != "t" && k != "kind")
                    {
                        r.data[k] = v;
                    }
                }
                if (r.seq != t.records_.size())
                {
                    throw Error(Errc::ParseError, "trace line " + std::to_string(lineno) + ": sequence gap");
                }
                t.records_.push_back(std::move(r));
            }
            return t;
        }

        static Trace from_ndjson(const std::string& text)
        {
            std::istringstream is(text);
            return read_ndjson(is);
        }

    private:
        std::vector<TraceRecord> records_;
    };
}
