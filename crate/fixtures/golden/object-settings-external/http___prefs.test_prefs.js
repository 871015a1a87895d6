var settings = null;
if (settings == null) {settings = {}; typeof __selfheal!=='undefined'&&__selfheal.activation("ObjectCreator","CannotSetPropertyOfNull|lang|http://prefs.test/prefs.js|2|14","http://prefs.test/prefs.js");} settings.lang = 'en';
