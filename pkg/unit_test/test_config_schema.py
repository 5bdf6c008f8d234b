import unittest

from dentlab.config_schema import (
    BooleanParameter,
    ConfigException,
    FloatParameter,
    IntegerParameter,
    ListParameter,
    SectionParameter,
    StringParameter,
    parse_section,
)

FIELDS = [
    StringParameter("mode", default="fast", enum_options=["fast", "slow"]),
    IntegerParameter("count", default=3, minimum=1, maximum=10),
    FloatParameter("rate", default=0.5, minimum=0.0, exclusive_minimum=True),
    FloatParameter("clip", nullable=True),
    BooleanParameter("verbose", default=False),
    ListParameter("sizes", item=IntegerParameter("size", required=True, minimum=1), default=[2]),
    SectionParameter("inner", fields=[StringParameter("name", required=True)]),
]


class ParseSectionTest(unittest.TestCase):
    def test__parse_section__missing_required_nested_key(self) -> None:
        # Act
        with self.assertRaises(ConfigException) as context:
            parse_section(FIELDS, {}, "")

        # Assert
        self.assertEqual(context.exception.field_path, "inner.name")

    def test__parse_section__values_and_nulls(self) -> None:
        # Act
        values = parse_section(
            FIELDS, {"count": 4, "clip": None, "sizes": [1, 5], "inner": {"name": "a"}}, ""
        )

        # Assert
        self.assertEqual(
            values,
            {
                "mode": "fast",
                "count": 4,
                "rate": 0.5,
                "clip": None,
                "verbose": False,
                "sizes": [1, 5],
                "inner": {"name": "a"},
            },
        )

    def test__parse_section__unknown_key(self) -> None:
        # Act / Assert
        with self.assertRaises(ConfigException) as context:
            parse_section(FIELDS, {"inner": {"name": "a", "nmae": "b"}}, "top")
        self.assertEqual(context.exception.field_path, "top.inner.nmae")
        self.assertIn("Valid keys: name", str(context.exception))

    def test__parse_section__not_an_object(self) -> None:
        # Act / Assert
        with self.assertRaises(ConfigException) as context:
            parse_section(FIELDS, [], "")
        self.assertEqual(context.exception.field_path, "<root>")

    def test__parse_section__list_item_path(self) -> None:
        # Act / Assert
        with self.assertRaises(ConfigException) as context:
            parse_section(FIELDS, {"sizes": [1, 0], "inner": {"name": "a"}}, "")
        self.assertEqual(context.exception.field_path, "sizes[1]")


class ParameterTest(unittest.TestCase):
    def test__string_parameter__option_not_allowed(self) -> None:
        # Act / Assert
        with self.assertRaises(ConfigException):
            FIELDS[0].parse("medium", "mode")

    def test__integer_parameter__integral_float_is_accepted(self) -> None:
        # Act
        with self.assertLogs("dentlab", "WARNING"):
            value = FIELDS[1].parse(5.0, "count")

        # Assert
        self.assertEqual(value, 5)
        self.assertIsInstance(value, int)

    def test__integer_parameter__rejects_bool_and_fraction(self) -> None:
        # Act / Assert
        for value in (True, 2.5, "3"):
            with self.assertRaises(ConfigException):
                FIELDS[1].parse(value, "count")

    def test__integer_parameter__bounds(self) -> None:
        # Act / Assert
        with self.assertRaises(ConfigException):
            FIELDS[1].parse(0, "count")
        with self.assertRaises(ConfigException):
            FIELDS[1].parse(11, "count")

    def test__float_parameter__exclusive_minimum_and_finiteness(self) -> None:
        # Act / Assert
        for value in (0.0, float("inf"), float("nan")):
            with self.assertRaises(ConfigException):
                FIELDS[2].parse(value, "rate")
        self.assertEqual(FIELDS[2].parse(1, "rate"), 1.0)

    def test__boolean_parameter__rejects_integers(self) -> None:
        # Act / Assert
        with self.assertRaises(ConfigException):
            FIELDS[4].parse(1, "verbose")
