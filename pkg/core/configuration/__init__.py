"""Configuration parsers: INI framework defaults and the YAML pipeline schema."""
