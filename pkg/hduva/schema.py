"""
Schema-driven configuration shared by the run configuration and the
scenario generators.
"""
from .errors import ArgumentError
from .name_filter import unknown_name_error

_TRUE = ("on", "true", "yes", "1")
_FALSE = ("off", "false", "no", "0")


def parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in _TRUE:
        return True
    if value in _FALSE:
        return False
    raise ArgumentError(f"Not a boolean: {text!r} (use on/off, true/false or 1/0)")


class SchemaConfigurable:
    """
    Mixin for objects configured by a schema dictionary.  Subclasses provide
    get_config_schema(); keys map to dictionaries with:

        - dtype: python type of the value (bool, int, float, str or tuple)
        - item: element type for tuple values (default float)
        - required: True if a value must be present (optional)
        - opts: allowed values (optional)
        - default: default value (optional)
        - description: help text (optional)
    """

    def get_config_schema(self) -> dict:
        raise NotImplementedError

    def _generate_default_config(self) -> dict:
        schema = self.get_config_schema()
        config = {}
        for key, params in schema.items():
            default = params.get("default")
            config[key] = default() if callable(default) else default
        return config

    def get_config(self) -> dict:
        return dict(self._config)

    def coerce(self, key: str, value):
        """
        Converts `value` to the schema type of `key`.  Strings are parsed
        (comma lists for tuples, on/off for booleans); other values must
        already have the right type.
        """
        schema = self.get_config_schema()
        if key not in schema:
            raise unknown_name_error("config key", key, list(schema))
        params = schema[key]
        dtype = params["dtype"]
        try:
            if isinstance(value, str):
                value = self._parse(value, dtype, params.get("item", float))
            elif dtype is tuple and isinstance(value, list):
                value = tuple(value)
            elif dtype is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
        except ValueError as exc:
            if isinstance(exc, ArgumentError):
                raise
            raise ArgumentError(f"Bad value for {key}: {value!r} ({exc})") from exc
        if not isinstance(value, dtype) or (dtype is int and isinstance(value, bool)):
            raise ArgumentError(
                f"Incorrect type for {key}: expected {dtype.__name__}, got {type(value).__name__}")
        opts = params.get("opts")
        if opts and value not in opts:
            raise ArgumentError(f"Invalid value for {key}: {value!r} (choose from {', '.join(opts)})")
        return value

    @staticmethod
    def _parse(text: str, dtype, item):
        text = text.strip()
        if dtype is bool:
            return parse_bool(text)
        if dtype is tuple:
            parts = [p.strip() for p in text.split(",") if p.strip()]
            return tuple(item(p) for p in parts)
        return dtype(text)

    def set_config(self, config: dict):
        """
        Updates the given keys.  Every value is coerced and checked before any
        is stored, then the whole config is validated.
        """
        coerced = {key: self.coerce(key, value) for key, value in config.items()}
        candidate = {**self._config, **coerced}
        previous, self._config = self._config, candidate
        try:
            self.validate_config()
        except ArgumentError:
            self._config = previous
            raise

    def validate_config(self):
        schema = self.get_config_schema()
        for key, params in schema.items():
            if params.get("required") and self._config.get(key) in (None, ""):
                raise ArgumentError(f"Missing required configuration parameter: {key}")


def parse_flag_pairs(args: list[str]) -> list[tuple[str, str]]:
    """
    ``--key value`` / ``--key=value`` tokens to (key, value) pairs, in order.
    """
    pairs = []
    i = 0
    while i < len(args):
        arg = args[i]
        if not arg.startswith("--") or len(arg) == 2:
            raise ArgumentError(f"Unexpected argument {arg!r}")
        key = arg[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(args):
                raise ArgumentError(f"Missing value for --{key}")
            value = args[i + 1]
            i += 2
        pairs.append((key, value))
    return pairs
