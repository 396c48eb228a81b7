"""Exception types shared across the package."""


class AbehgError(Exception):
    """Base class for every error raised by this package."""


class DomainError(AbehgError, ValueError):
    """An argument is outside the operation's domain."""


class MalformedArtifact(AbehgError, ValueError):
    """A serialized artifact failed decoding or an invariant check."""


class PolicyParseError(AbehgError, ValueError):
    """Policy text could not be parsed.

    ``kind`` names the failure (``underflow``, ``leftover``, ``malformed_gate``,
    ``threshold``, ``empty``, ``unbalanced``, ``syntax``) and ``position`` is
    the 1-based token index where it was detected.
    """

    def __init__(self, kind: str, message: str, position: int | None = None):
        self.kind = kind
        self.position = position
        where = f" at token {position}" if position is not None else ""
        super().__init__(f"{kind}: {message}{where}")


class PolicyNotSatisfied(AbehgError):
    """The key's attributes do not satisfy the ciphertext policy."""

    def __init__(self):
        super().__init__("policy not satisfied")


class AuthenticationFailure(AbehgError):
    """Authenticated decryption rejected the envelope."""


class OAuthError(AbehgError):
    """Authorization-server error with its OAuth error code and HTTP status."""

    def __init__(self, error: str, description: str = "", status: int = 400):
        self.error = error
        self.description = description
        self.status = status
        super().__init__(f"{error}: {description}" if description else error)


class ResourceError(AbehgError):
    """Resource-server error carrying an HTTP status."""

    codes = {400: "bad_request", 401: "unauthorized", 403: "forbidden", 404: "not_found", 409: "conflict"}

    def __init__(self, status: int, description: str = ""):
        self.status = status
        self.error = self.codes.get(status, "error")
        self.description = description
        super().__init__(f"{self.error}: {description}" if description else self.error)
