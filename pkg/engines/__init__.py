# Engines module：純數值層，每個模組一個子領域
__all__ = ['angular', 'specfun', 'potential', 'radial', 'green', 'scatter', 'translate', 'msw', 'errors']
