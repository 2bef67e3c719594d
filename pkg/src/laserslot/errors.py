"""Exception types raised across the package."""


class InvalidFrequency(ValueError):
    def __init__(self, value):
        super().__init__(f"frequency {value!r} GHz is not on the 100 GHz grid 191300..196100")
        self.value = value


class MalformedLine(ValueError):
    def __init__(self, line, reason=""):
        msg = f"malformed CMIS line: {line!r}"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)
        self.line = line


class NonMonotonicTimestamps(ValueError):
    def __init__(self, port, start, end):
        super().__init__(f"{port}: configured event at {end} precedes reinit at {start}")
        self.port = port
        self.start = start
        self.end = end


class InvalidStatistics(ValueError):
    pass


class UnknownPort(LookupError):
    def __init__(self, port):
        super().__init__(f"unknown port {port!r}")
        self.port = port


class UnknownTransceiver(LookupError):
    pass


class InvalidFeedback(ValueError):
    pass


class CorruptModel(ValueError):
    pass


class ProtocolError(Exception):
    def __init__(self, document, reason=""):
        text = document.decode("utf-8", "replace") if isinstance(document, bytes) else document
        super().__init__(f"protocol error: {reason or 'unparseable document'}: {text[:200]!r}")
        self.document = document


class RpcError(Exception):
    """An rpc-error reply from an agent."""

    def __init__(self, tag, message):
        super().__init__(f"{tag}: {message}")
        self.tag = tag
        self.message = message


class SessionDown(ConnectionError):
    pass


class RequestFailed(RuntimeError):
    def __init__(self, request_id, errors):
        self.request_id = request_id
        self.errors = dict(errors)
        detail = "; ".join(f"{k}: {v}" for k, v in self.errors.items())
        super().__init__(f"request {request_id} failed: {detail}")


class DbWriteError(OSError):
    pass


class InvalidTopology(ValueError):
    pass


class ModelNotFound(FileNotFoundError):
    pass
