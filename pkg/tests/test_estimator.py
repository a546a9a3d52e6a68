"""Storage arithmetic: exact integers, published-figure reproduction under
binary units, and monotonicity."""

import pytest

from conninsure.errors import ParameterError
from conninsure.estimator import (
    EstimatorParams,
    cert_storage_bytes,
    customer_voucher_storage_bytes,
    insurer_voucher_storage_bytes,
    storage_report,
)

GIB = 2**30
TIB = 2**40


class TestCertStorage:
    def test_reference_parameters(self):
        # 5e5 domains, 1900 B certs, 90-day validity -> ~2.9e9 B = 2.70 GiB
        out = cert_storage_bytes(500_000, 1_900, 90)
        assert out == 2_902_777_777
        assert abs(out - 2.9e9) <= 0.02 * 2.9e9
        assert round(out / GIB, 2) == 2.70

    def test_validity_equals_retention_is_zero(self):
        assert cert_storage_bytes(500_000, 1_900, 365) == 0

    def test_linear_in_domains(self):
        # k=73 divides 365 exactly, so flooring cannot mask the linearity
        assert cert_storage_bytes(1_000_000, 1_900, 73) == 2 * cert_storage_bytes(
            500_000, 1_900, 73
        )

    def test_zero_validity_rejected(self):
        with pytest.raises(ParameterError):
            cert_storage_bytes(1, 1, 0)


class TestCustomerVoucherStorage:
    def test_low_estimate_reproduces_published_figure(self):
        # 1000 vouchers/day reproduces the ~0.58 GB/year figure
        out = customer_voucher_storage_bytes(1_000)
        assert out == 621_621_280
        assert round(out / GIB, 2) == 0.58

    def test_printed_parameters_give_the_larger_figure(self):
        # the printed 2500/day actually yields ~1.45 GiB/year
        out = customer_voucher_storage_bytes(2_500)
        assert out == 1_552_371_280
        assert round(out / GIB, 2) == 1.45

    def test_zero_everything_is_zero(self):
        assert customer_voucher_storage_bytes(0, cycles_per_day=0) == 0


class TestInsurerVoucherStorage:
    def test_reference_parameters(self):
        # 512 B * 24 cycles * 365 days * 44e6 customers -> ~180 TB/year binary
        out = insurer_voucher_storage_bytes()
        assert out == 197_345_280_000_000
        assert abs(out - 1.973e14) <= 0.01 * 1.973e14
        assert round(out / TIB, 1) == 179.5

    def test_single_customer(self):
        assert insurer_voucher_storage_bytes(customers=1) == 512 * 24 * 365

    def test_halving_cycles_halves_result(self):
        assert insurer_voucher_storage_bytes(
            cycles_per_day=12
        ) * 2 == insurer_voucher_storage_bytes(cycles_per_day=24)


class TestMonotonicity:
    @pytest.mark.parametrize("field,base,larger", [
        ("n_domains", 100, 200),
        ("cert_bytes", 100, 200),
        ("vouchers_per_day", 100, 200),
        ("cycles_per_day", 1, 24),
        ("customers", 10, 20),
    ])
    def test_outputs_grow_with_parameters(self, field, base, larger):
        small = storage_report(EstimatorParams(**{field: base}))
        big = storage_report(EstimatorParams(**{field: larger}))
        total = lambda r: (
            r["certificates"]["bytes"]
            + r["customer_vouchers"]["bytes"]
            + r["insurer_vouchers"]["bytes"]
        )
        assert total(big) > total(small)


class TestReport:
    def test_exact_integer_outputs(self):
        report = storage_report(EstimatorParams())
        for key in ("certificates", "customer_vouchers", "insurer_vouchers"):
            assert isinstance(report[key]["bytes"], int)

    def test_dual_reading_surfaced(self):
        report = storage_report(EstimatorParams())
        assert report["customer_vouchers_low_estimate"]["bytes"] == 621_621_280
        assert "0.58" in report["note"] and "1.45" in report["note"]

    def test_invalid_params_rejected(self):
        with pytest.raises(ParameterError):
            storage_report(EstimatorParams(cert_validity_days=0))
