"""Exception hierarchy.

Every handler failure is an :class:`IBCError`; raising one inside a ledger
transaction aborts it and reverts all of its writes.
"""


class IBCError(Exception):
    """Base class for every protocol-level abort."""


# store
class InvalidKey(IBCError):
    pass


class ValueTooLarge(IBCError):
    pass


class KeyAbsent(IBCError):
    pass


class KeyPresent(IBCError):
    pass


class HeightPruned(IBCError):
    pass


# host ledger
class PortAlreadyBound(IBCError):
    pass


class PortNotBound(IBCError):
    pass


class Unauthorized(IBCError):
    pass


class LedgerHalted(IBCError):
    pass


class TxAborted(IBCError):
    def __init__(self, reason: str, cause: Exception | None = None):
        super().__init__(reason)
        self.reason = reason
        self.cause = cause


class MalformedDatagram(IBCError):
    pass


# clients
class IdentifierInUse(IBCError):
    pass


class InvalidIdentifier(IBCError):
    pass


class MalformedState(IBCError):
    pass


class NoSuchClient(IBCError):
    pass


class Frozen(IBCError):
    pass


class StaleHeader(IBCError):
    pass


class InvalidHeader(IBCError):
    pass


class Expired(IBCError):
    pass


class NotMisbehaviour(IBCError):
    pass


class NoConsensusState(IBCError):
    pass


# connections
class NoSuchConnection(IBCError):
    pass


class ConnectionNotOpen(IBCError):
    pass


class FutureConsensusHeight(IBCError):
    pass


class ProofFailure(IBCError):
    pass


class IncompatibleVersion(IBCError):
    pass


class ConflictingPriorState(IBCError):
    pass


class BadState(IBCError):
    pass


# channels and packets
class MultiHopUnsupported(IBCError):
    pass


class NoSuchChannel(IBCError):
    pass


class AlreadyClosed(IBCError):
    pass


class ChannelClosed(IBCError):
    pass


class ChannelNotOpen(IBCError):
    pass


class WrongCounterparty(IBCError):
    pass


class TimeoutElapsedOnClient(IBCError):
    pass


class WrongSequence(IBCError):
    pass


class TimedOut(IBCError):
    pass


class OutOfOrder(IBCError):
    pass


class DuplicateReceipt(IBCError):
    pass


class NoCommitment(IBCError):
    pass


class CommitmentMismatch(IBCError):
    pass


class WrongAckSequence(IBCError):
    pass


class NotYetTimedOut(IBCError):
    pass


class PacketWasReceived(ProofFailure):
    pass


class ChannelNotClosed(ProofFailure):
    pass


class NotYetProcessed(IBCError):
    pass


# routing / applications
class UnknownPort(IBCError):
    pass


class VersionRejected(IBCError):
    pass


class InsufficientBalance(IBCError):
    pass


class InvalidTransfer(IBCError):
    pass


# harness
class ScenarioInvalid(Exception):
    def __init__(self, message: str, location: str = ""):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


class MalformedTrace(Exception):
    pass
