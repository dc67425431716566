#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gridos
{
    enum class Errc
    {
        InvalidLinkMetrics,
        InvalidSpec,
        MissingLink,
        UnknownPeer,
        EmptyCandidateSet,
        AlreadyJoined,
        NotJoined,
        NoSubGrids,
        UnknownSubGrid,
        NoSlaves,
        MasterNotFailed,
        InvalidAdvertisement,
        InvalidPolicy,
        NoEligibleMachine,
        DestinationDenied,
        UnknownThread,
        InvalidThreadState,
        UnknownCallee,
        CalleeUnreachable,
        InvalidEpoch,
        UnknownWorkload,
        ParseError,
        ValidationError,
        AlreadyFailed,
        TooFewSubGrids,
        IoError,
    };

    inline constexpr std::string_view to_string(Errc code) noexcept
    {
        switch (code)
        {
        case Errc::InvalidLinkMetrics: return "InvalidLinkMetrics";
        case Errc::InvalidSpec: return "InvalidSpec";
        case Errc::MissingLink: return "MissingLink";
        case Errc::UnknownPeer: return "UnknownPeer";
        case Errc::EmptyCandidateSet: return "EmptyCandidateSet";
        case Errc::AlreadyJoined: return "AlreadyJoined";
        case Errc::NotJoined: return "NotJoined";
        case Errc::NoSubGrids: return "NoSubGrids";
        case Errc::UnknownSubGrid: return "UnknownSubGrid";
        case Errc::NoSlaves: return "NoSlaves";
        case Errc::MasterNotFailed: return "MasterNotFailed";
        case Errc::InvalidAdvertisement: return "InvalidAdvertisement";
        case Errc::InvalidPolicy: return "InvalidPolicy";
        case Errc::NoEligibleMachine: return "NoEligibleMachine";
        case Errc::DestinationDenied: return "DestinationDenied";
        case Errc::UnknownThread: return "UnknownThread";
        case Errc::InvalidThreadState: return "InvalidThreadState";
        case Errc::UnknownCallee: return "UnknownCallee";
        case Errc::CalleeUnreachable: return "CalleeUnreachable";
        case Errc::InvalidEpoch: return "InvalidEpoch";
        case Errc::UnknownWorkload: return "UnknownWorkload";
        case Errc::ParseError: return "ParseError";
        case Errc::ValidationError: return "ValidationError";
        case Errc::AlreadyFailed: return "AlreadyFailed";
        case Errc::TooFewSubGrids: return "TooFewSubGrids";
        case Errc::IoError: return "IoError";
        }
        return "Unknown";
    }

    /// Every failure raised by the library carries one of the codes above so
    /// callers (and the CLI's machine-readable error output) can branch on it.
    class Error : public std::runtime_error
    {
    public:
        Error(Errc code, const std::string& what)
            : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), detail_(what)
        {
        }

        [[nodiscard]] Errc code() const noexcept { return code_; }
        [[nodiscard]] const std::string& detail() const noexcept { return detail_; }

    private:
        Errc code_;
        std::string detail_;
    };
}
