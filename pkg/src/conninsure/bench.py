"""Wall-clock benchmark for chameleon sign/verify at production group size."""

import time
from dataclasses import dataclass

from . import crypto
from .errors import ParameterError
from .rand import DEFAULT, RandomSource


@dataclass(frozen=True)
class BenchReport:
    iterations: int
    mean_sign_ms: float
    mean_verify_ms: float
    backend: str
    all_verified: bool

    def as_dict(self) -> dict:
        return self.__dict__.copy()


def bench_chameleon(
    iterations: int = 1000,
    params: crypto.GroupParams = crypto.GROUP_2048_256,
    rng: RandomSource = DEFAULT,
) -> BenchReport:
    """Mean sign and verify times in milliseconds over fresh messages."""
    if iterations < 100:
        raise ParameterError("need at least 100 iterations for a stable mean")
    signer = crypto.generate_sig_keypair(crypto.SCHEME_ED25519, rng)
    recipient = crypto.generate_chameleon_keypair(params, rng).public
    context = b"\x00" * 8 + b"Certificates"

    messages = [rng.bytes(64) for _ in range(iterations)]
    sigs = []
    t0 = time.perf_counter()
    for message in messages:
        sigs.append(crypto.chameleon_sign(signer, recipient, message, context, rng))
    t1 = time.perf_counter()
    all_ok = True
    for message, sig in zip(messages, sigs):
        all_ok &= crypto.chameleon_verify(signer.public, recipient, message, sig)
    t2 = time.perf_counter()

    return BenchReport(
        iterations=iterations,
        mean_sign_ms=(t1 - t0) / iterations * 1000,
        mean_verify_ms=(t2 - t1) / iterations * 1000,
        backend=crypto.modexp_backend(),
        all_verified=all_ok,
    )


def bench_both_backends(iterations: int = 1000) -> dict:
    """Run the benchmark on the accelerated and pure-Python modexp paths."""
    reports = {}
    original = crypto.modexp_backend()
    try:
        crypto.use_pure_modexp(False)
        if crypto.modexp_backend() == "gmpy2":
            reports["gmpy2"] = bench_chameleon(iterations).as_dict()
        crypto.use_pure_modexp(True)
        reports["pure"] = bench_chameleon(iterations).as_dict()
    finally:
        crypto.use_pure_modexp(original == "pure")
    return reports
