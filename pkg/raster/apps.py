from django.apps import AppConfig


class RasterConfig(AppConfig):
    name = 'raster'
