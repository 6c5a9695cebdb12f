"""Word images, PGM/PNG codecs and fragment extraction."""
