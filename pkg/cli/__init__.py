# CLI module
__all__ = ['dwms']
