"""castleforge: certified castles and comparison on free zero-dimensional systems."""
