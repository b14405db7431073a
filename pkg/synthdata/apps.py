from django.apps import AppConfig


class SynthdataConfig(AppConfig):
    name = 'synthdata'
