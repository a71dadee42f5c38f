"""Unit tests for experiment declarations: parsing, validation and templates."""

import pytest
from hypothesis import given, strategies as st

from protocol_testbed.application.config_service import (
    ServiceRole,
    parse_config,
    render_template,
    serialize_config,
    service_context,
    validate_config,
)
from protocol_testbed.application.plugin_registry import PluginKind
from protocol_testbed.domain.errors import (
    ConfigStructureError,
    ConfigSyntaxError,
    TemplateError,
    TemplateTypeError,
)
from protocol_testbed.domain.value_objects import ms


def error_paths(report):
    return [issue.path for issue in report.errors]


class TestParseConfig:
    """Tests for parse_config."""

    def test_minimal_document(self, minimal_config_text):
        """Test a minimal declaration parses with defaults."""
        config = parse_config(minimal_config_text)
        assert config.name == "smoke"
        assert config.seed == 3
        assert config.network.kind == PluginKind.NETWORK_ENVIRONMENT
        assert config.execution.name == "inproc"
        assert [s.role for s in config.services] == [ServiceRole.IUT, ServiceRole.TESTER]
        assert config.services[1].implementation.kind == PluginKind.TESTER
        assert config.tests[0].timeout == ms(10_000)
        assert config.tests[0].iterations == 1
        assert config.output_dir == "./results/smoke"

    @pytest.mark.parametrize("key", ["name", "seed", "network", "services", "tests"])
    def test_missing_mandatory_key(self, minimal_config_text, key):
        """Test a missing top-level key is reported by name."""
        lines = minimal_config_text.splitlines()
        start = next(i for i, line in enumerate(lines) if line.startswith(f"{key}:"))
        end = next((i for i in range(start + 1, len(lines)) if lines[i] and not lines[i].startswith(" ")), len(lines))
        text = "\n".join(lines[:start] + lines[end:])
        with pytest.raises(ConfigStructureError) as info:
            parse_config(text)
        assert info.value.path == key

    def test_unknown_key(self, minimal_config_text):
        """Test unknown top-level keys are rejected."""
        with pytest.raises(ConfigStructureError) as info:
            parse_config(minimal_config_text + "colour: blue\n")
        assert info.value.path == "colour"

    def test_bad_role(self, minimal_config_text):
        """Test a service role other than tester or iut is rejected."""
        with pytest.raises(ConfigStructureError) as info:
            parse_config(minimal_config_text.replace("role: iut", "role: peer"))
        assert info.value.path == "services[0].role"

    def test_duplicate_service(self, minimal_config_text):
        """Test service names must be unique."""
        with pytest.raises(ConfigStructureError) as info:
            parse_config(minimal_config_text.replace("- name: client", "- name: server"))
        assert info.value.path == "services[1].name"

    def test_bad_timeout(self, minimal_config_text):
        """Test a malformed timeout is reported at its path."""
        with pytest.raises(ConfigStructureError) as info:
            parse_config(minimal_config_text + "    timeout: soon\n")
        assert info.value.path == "tests[0].timeout"

    @pytest.mark.parametrize("text, path", [("seed: yes", "seed"), ("seed: true", "seed"), ("seed: \"3\"", "seed")])
    def test_seed_must_be_an_integer(self, minimal_config_text, text, path):
        """Test booleans and strings are not accepted as the seed."""
        with pytest.raises(ConfigStructureError) as info:
            parse_config(minimal_config_text.replace("seed: 3", text))
        assert info.value.path == path

    def test_unknown_service_key(self, minimal_config_text):
        """Test unknown keys inside a service carry the service index."""
        with pytest.raises(ConfigStructureError) as info:
            parse_config(minimal_config_text.replace("    role: tester\n", "    role: tester\n    colour: red\n"))
        assert info.value.path == "services[1].colour"
        assert str(info.value) == "services[1].colour: unknown key"

    def test_syntax_error(self):
        """Test malformed text is a syntax error."""
        with pytest.raises(ConfigSyntaxError):
            parse_config("name: [unclosed\n")

    def test_plugin_ref_with_params(self, minimal_config_text):
        """Test a plugin reference may carry parameters."""
        text = minimal_config_text.replace("network: detsim", "network:\n  name: detsim\n  params: {latency: 20ms}")
        config = parse_config(text)
        assert config.network.name == "detsim"
        assert config.network.params == {"latency": "20ms"}


class TestValidateConfig:
    """Tests for validate_config."""

    def test_valid_with_defaults(self, registry, minimal_config_text):
        """Test a valid declaration resolves with every default filled."""
        report = validate_config(parse_config(minimal_config_text), registry)
        assert report.ok, report.lines()
        assert report.lines() == ["ok"]
        assert "network.params.latency" in report.filled
        assert "services[1].implementation.params.policy" in report.filled
        assert report.resolved.network.params["latency"] == ms(50)
        assert report.resolved.services[0].protocol.params["rto"] == ms(200)

    def test_durations_normalized(self, registry, minimal_config_text):
        """Test duration text becomes nanoseconds."""
        text = minimal_config_text.replace("network: detsim", "network:\n  name: detsim\n  params: {latency: 20ms}")
        report = validate_config(parse_config(text), registry)
        assert report.resolved.network.params["latency"] == ms(20)

    def test_unknown_plugin_lists_alternatives(self, registry, minimal_config_text):
        """Test an unknown implementation is reported with what is available."""
        config = parse_config(minimal_config_text.replace("implementation: minip_server", "implementation: nosuch"))
        report = validate_config(config, registry)
        assert error_paths(report) == ["services[0].implementation.name"]
        assert "minip_server" in report.errors[0].message

    def test_out_of_range(self, registry, minimal_config_text):
        """Test a loss rate above one is rejected."""
        text = minimal_config_text.replace("network: detsim", "network:\n  name: detsim\n  params: {loss_rate: 1.5}")
        report = validate_config(parse_config(text), registry)
        assert error_paths(report) == ["network.params.loss_rate"]
        assert report.resolved is None

    def test_errors_accumulate(self, registry, minimal_config_text):
        """Test independent problems are all reported."""
        text = minimal_config_text.replace(
            "implementation: spec_tester",
            "implementation:\n      name: spec_tester\n      params: {policy: Greedy, colour: 1, max_steps: x}",
        )
        report = validate_config(parse_config(text), registry)
        assert set(error_paths(report)) == {
            "services[1].implementation.params.colour",
            "services[1].implementation.params.policy",
            "services[1].implementation.params.max_steps",
        }

    def test_protocol_mismatch(self, registry, minimal_config_text):
        """Test an implementation must support the service's protocol."""
        config = parse_config(minimal_config_text.replace("implementation: minip_server", "implementation: tinyq_server"))
        report = validate_config(config, registry)
        assert "services[0].implementation.name" in error_paths(report)

    def test_unknown_protocol_is_one_error(self, registry, minimal_config_text):
        """Test a misspelt protocol is reported once, not again by the checks that depend on it."""
        text = minimal_config_text.replace(
            "protocol: minip\n    implementation: minip_server", "protocol: minpi\n    implementation: minip_server", 1
        )
        report = validate_config(parse_config(text), registry)
        assert error_paths(report) == ["services[0].protocol.name"]
        assert len(report.errors) == 1

    def test_test_references(self, registry, minimal_config_text):
        """Test tester and target must name services with the right roles."""
        text = minimal_config_text.replace("tester: client", "tester: server").replace("target: server", "target: ghost")
        report = validate_config(parse_config(text + "    iterations: 0\n"), registry)
        assert set(error_paths(report)) == {"tests[0].tester", "tests[0].target", "tests[0].iterations"}

    def test_template_errors(self, registry, minimal_config_text):
        """Test unresolved template placeholders are validation errors."""
        text = minimal_config_text.replace(
            "implementation: minip_server", 'implementation: minip_server\n    command_template: "run {{ nope }}"'
        )
        report = validate_config(parse_config(text), registry)
        assert error_paths(report) == ["services[0].command_template"]

    def test_validation_is_idempotent(self, registry, minimal_config_text):
        """Test validating a resolved declaration changes nothing."""
        resolved = validate_config(parse_config(minimal_config_text), registry).resolved
        again = validate_config(resolved, registry)
        assert again.ok
        assert again.resolved == resolved
        assert again.filled == []

    def test_serialized_round_trip(self, registry, minimal_config_text):
        """Test the resolved declaration reads back equal."""
        resolved = validate_config(parse_config(minimal_config_text), registry).resolved
        assert parse_config(serialize_config(resolved)) == resolved

    def test_shipped_experiments_validate(self, registry, experiments_dir):
        """Test every shipped experiment is valid and every invalid one is not."""
        for path in sorted(experiments_dir.glob("*.yaml")):
            report = validate_config(parse_config(path.read_text()), registry)
            assert report.ok, (path.name, report.lines())
        for name, expected in [("unknown_plugin", "services[0].implementation.name"), ("loss_rate", "network.params.loss_rate")]:
            text = (experiments_dir / "invalid" / f"{name}.yaml").read_text()
            assert expected in error_paths(validate_config(parse_config(text), registry))
        with pytest.raises(ConfigStructureError):
            parse_config((experiments_dir / "invalid" / "missing_seed.yaml").read_text())


class TestRenderTemplate:
    """Tests for command templates."""

    def test_values(self):
        """Test scalar rendering and dotted lookups."""
        context = {"name": "server", "port": 4433, "rate": 0.5, "on": True, "params": {"role": "client"}}
        assert render_template("{{ name }}:{{port}} {{ rate }} {{ on }} {{ params.role }}", context) == (
            "server:4433 0.5 true client"
        )

    @pytest.mark.parametrize("value, text", [(0.00001, "0.00001"), (1e16, "10000000000000000"), (2.5, "2.5")])
    def test_rationals_are_positional(self, value, text):
        """Test decimals render without an exponent."""
        assert render_template("r={{ x }}", {"x": value}) == f"r={text}"

    def test_unresolved(self):
        """Test a missing name raises with the identifier."""
        with pytest.raises(TemplateError) as info:
            render_template("{{ params.missing }}", {"params": {}})
        assert info.value.identifier == "params.missing"

    def test_non_scalar(self):
        """Test a map value cannot be rendered."""
        with pytest.raises(TemplateTypeError):
            render_template("{{ params }}", {"params": {"a": 1}})

    @pytest.mark.parametrize("template", ["{{ name", "name }}", "{{ {{ name }} }}", "{{ }}"])
    def test_malformed(self, template):
        """Test unbalanced or nested placeholders raise."""
        with pytest.raises(TemplateError):
            render_template(template, {"name": "x"})

    def test_service_context(self, minimal_config_text):
        """Test a service exposes its name, role, seed and plugin names."""
        config = parse_config(minimal_config_text)
        context = service_context(config.services[1], config.seed)
        assert render_template("{{ role }} {{ implementation }} {{ protocol }} {{ seed }}", context) == (
            "tester spec_tester minip 3"
        )

    @given(st.text(max_size=40).filter(lambda s: "{" not in s and "}" not in s))
    def test_plain_text_unchanged(self, text):
        """Test text without braces renders to itself."""
        assert render_template(text, {}) == text
