from django.contrib import admin
from django.urls import path

# Only the admin is served: it browses the scenario run records.
urlpatterns = [
    path('admin/', admin.site.urls),
]
