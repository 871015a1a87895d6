if (typeof trackPageView != 'undefined' && trackPageView) {trackPageView('home');} else {typeof __selfheal!=='undefined'&&__selfheal.activation("LineSkipper","NotDefined|trackPageView|http://track.test/track.js|1|0","http://track.test/track.js");}
