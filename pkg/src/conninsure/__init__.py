"""Connection-insurance protocol suite.

An insurer distributes vetted certificate lists in signed update cycles,
a client collects server-signed connection vouchers through TLS 1.2
handshakes, and an offline judge verifies insurance-case claims.
Chameleon signatures make the insurer's endorsements non-transferable;
padded Merkle trees keep the client's browsing history private.
"""

__version__ = "1.0.0"
